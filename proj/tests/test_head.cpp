// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <doctest.h>

#include "unicr/error.hpp"
#include "unicr/metrics.hpp"
#include "unicr/rng.hpp"

using namespace unicr;

namespace {

FeatureVector fv(std::vector<double> values, std::vector<std::string> schema) {
  FeatureVector z;
  z.values = std::move(values);
  z.schema = std::move(schema);
  return z;
}

std::vector<FeatureVector> one_dim_features(const std::vector<double>& xs) {
  std::vector<FeatureVector> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(fv({x}, {"z"}));
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------
// Isotonic regression
// ---------------------------------------------------------------------------

TEST_CASE("fit_isotonic on already-monotone data is identity-like") {
  std::vector<double> c{0.2, 0.8}, r{0.0, 1.0};
  IsotonicMap map = fit_isotonic(c, r);
  CHECK(map.valid());
  CHECK(map(0.2) == doctest::Approx(0.0));
  CHECK(map(0.8) == doctest::Approx(1.0));
  CHECK(map(0.5) == doctest::Approx(0.5));  // interpolates through the points
  CHECK(map(0.0) == doctest::Approx(0.0));  // clamped at the ends
  CHECK(map(1.0) == doctest::Approx(1.0));
}

TEST_CASE("fit_isotonic collapses reversed data toward the mean") {
  // High confidence always wrong: PAV pools the whole set into one block.
  std::vector<double> c{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  std::vector<double> r{1.0, 1.0, 1.0, 0.0, 0.0, 0.0};
  IsotonicMap map = fit_isotonic(c, r);
  for (double x : c) CHECK(map(x) == doctest::Approx(0.5));

  std::vector<double> mapped;
  for (double x : c) mapped.push_back(map(x));
  CHECK(brier(mapped, r) < brier(c, r));
}

TEST_CASE("fit_isotonic never increases Brier on its fit split") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    int n = rng.uniform_int(2, 60);
    std::vector<double> c, r;
    for (int i = 0; i < n; ++i) {
      c.push_back(rng.uniform());
      r.push_back(rng.bernoulli(0.4 + 0.2 * c.back()) ? 1.0 : 0.0);
    }
    IsotonicMap map = fit_isotonic(c, r);
    std::vector<double> mapped;
    for (double x : c) mapped.push_back(map(x));
    CHECK(brier(mapped, r) <= brier(c, r) + 1e-12);

    // Weak order preservation on a grid.
    double prev = -1.0;
    for (int g = 0; g <= 20; ++g) {
      double y = map(g / 20.0);
      CHECK(y >= prev - 1e-12);
      prev = y;
    }
  }
}

TEST_CASE("fit_isotonic needs two points") {
  CHECK_THROWS_AS(fit_isotonic(std::vector<double>{0.5}, std::vector<double>{1.0}), Error);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

TEST_CASE("predict_confidence basics") {
  HeadModel m;
  m.kind = HeadKind::logistic;
  m.d = 2;
  m.weights = {0.0, 0.0, 0.0};
  FeatureVector z = fv({3.0, -1.0}, {"a", "b"});

  SUBCASE("zero weights give 0.5") {
    CHECK(predict_confidence(m, nullptr, z) == doctest::Approx(0.5));
  }
  SUBCASE("identity isotonic map changes nothing") {
    IsotonicMap identity;
    identity.breakpoints = {{0.0, 0.0}, {1.0, 1.0}};
    m.weights = {0.4, -0.2, 0.1};
    CHECK(predict_confidence(m, &identity, z) ==
          doctest::Approx(predict_confidence(m, nullptr, z)));
  }
  SUBCASE("temperature 1 reproduces unscaled features") {
    m.weights = {0.4, -0.2, 0.1};
    m.temp_indices = {0, 1};
    m.temperature = 1.0;
    double u = 0.4 * 3.0 - 0.2 * (-1.0) + 0.1;
    CHECK(predict_confidence(m, nullptr, z) == doctest::Approx(sigmoid(u)));
  }
  SUBCASE("schema mismatch is rejected") {
    m.schema_hash = "0000000000000000";
    CHECK_THROWS_AS(predict_confidence(m, nullptr, z), Error);
  }
  SUBCASE("output is clamped into (0,1)") {
    m.weights = {100.0, 0.0, 50.0};
    CHECK(predict_confidence(m, nullptr, z) == doctest::Approx(1.0 - 1e-6));
  }
}

TEST_CASE("uniform temperature rescaling preserves confidence ranking") {
  // All features temperature-scaled: scaling T monotonely rescales the
  // pre-bias logit, so the ordering across examples is invariant.
  Rng rng(29);
  HeadModel m;
  m.kind = HeadKind::logistic;
  m.d = 3;
  m.weights = {0.8, -1.1, 0.5, 0.0};
  m.temp_indices = {0, 1, 2};

  std::vector<FeatureVector> zs;
  for (int i = 0; i < 20; ++i)
    zs.push_back(fv({rng.normal(), rng.normal(), rng.normal()}, {"a", "b", "c"}));

  auto ranking_at = [&](double temperature) {
    HeadModel probe = m;
    probe.temperature = temperature;
    std::vector<double> conf;
    for (const auto& z : zs) conf.push_back(predict_confidence(probe, nullptr, z));
    std::vector<std::size_t> order(conf.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return conf[a] < conf[b]; });
    return order;
  };

  auto base = ranking_at(1.0);
  CHECK(ranking_at(0.5) == base);
  CHECK(ranking_at(2.0) == base);
  CHECK(ranking_at(7.3) == base);
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

TEST_CASE("fit_head recovers a known 1-D logistic slope") {
  Rng rng(4242);
  const int n = 10000;
  std::vector<double> xs, labels;
  for (int i = 0; i < n; ++i) {
    double x = rng.uniform(-2.0, 2.0);
    xs.push_back(x);
    labels.push_back(rng.bernoulli(sigmoid(2.0 * x)) ? 1.0 : 0.0);
  }
  std::vector<FeatureVector> feats = one_dim_features(xs);
  std::vector<CorrectnessLabel> y;
  for (double v : labels) y.push_back({LabelKind::exact, v});

  HeadFitConfig config;
  config.seed = 1;
  HeadModel m = fit_head(feats, y, config);
  CHECK(std::fabs(m.weights[0] - 2.0) <= 0.3);
  CHECK(std::fabs(m.weights[1]) <= 0.2);  // bias near zero
}

TEST_CASE("constant features with balanced labels predict one half") {
  std::vector<FeatureVector> feats;
  std::vector<CorrectnessLabel> y;
  for (int i = 0; i < 200; ++i) {
    feats.push_back(fv({1.0}, {"z"}));
    y.push_back({LabelKind::exact, i % 2 == 0 ? 1.0 : 0.0});
  }
  HeadFitConfig config;
  config.seed = 2;
  HeadModel m = fit_head(feats, y, config);
  CHECK(predict_confidence_values(m, nullptr, std::vector<double>{1.0}) ==
        doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("alpha zero is a relaxation under pure BCE") {
  Rng rng(77);
  std::vector<FeatureVector> feats;
  std::vector<CorrectnessLabel> y;
  for (int i = 0; i < 400; ++i) {
    double x = rng.normal();
    feats.push_back(fv({x}, {"z"}));
    y.push_back({LabelKind::exact, rng.bernoulli(sigmoid(1.5 * x - 0.3)) ? 1.0 : 0.0});
  }
  HeadFitConfig pure;
  pure.alpha = 0.0;
  pure.l2_lambda = 0.0;
  pure.seed = 3;
  pure.early_stopping = false;
  HeadFitConfig composite = pure;
  composite.alpha = 0.25;

  HeadModel m0 = fit_head(feats, y, pure);
  HeadModel m1 = fit_head(feats, y, composite);

  auto bce_of = [&](const HeadModel& m) {
    std::vector<double> conf, labels;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      conf.push_back(predict_confidence_values(m, nullptr, feats[i].values));
      labels.push_back(y[i].value);
    }
    return nll(conf, labels);
  };
  CHECK(bce_of(m0) <= bce_of(m1) + 1e-6);
}

TEST_CASE("degenerate one-class labels fit an intercept-only head") {
  std::vector<FeatureVector> feats;
  std::vector<CorrectnessLabel> y;
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    feats.push_back(fv({rng.normal(), rng.normal()}, {"a", "b"}));
    y.push_back({LabelKind::exact, 1.0});
  }
  HeadModel m = fit_head(feats, y, HeadFitConfig{});
  CHECK(m.weights[0] == 0.0);
  CHECK(m.weights[1] == 0.0);
  double expected = std::log((50.0 + 1.0) / (50.0 + 2.0) / (1.0 - (50.0 + 1.0) / (50.0 + 2.0)));
  CHECK(m.weights[2] == doctest::Approx(expected));
  // Same confidence whatever the evidence says.
  double c1 = predict_confidence_values(m, nullptr, std::vector<double>{0.0, 0.0});
  double c2 = predict_confidence_values(m, nullptr, std::vector<double>{5.0, -3.0});
  CHECK(c1 == doctest::Approx(c2));
}

TEST_CASE("fit_head rejects undersized or inconsistent inputs") {
  std::vector<FeatureVector> feats = one_dim_features({0.1, 0.2, 0.3});
  std::vector<CorrectnessLabel> y(3, {LabelKind::exact, 1.0});
  CHECK_THROWS_AS(fit_head(feats, y, HeadFitConfig{}), Error);

  feats = one_dim_features(std::vector<double>(25, 0.5));
  y.assign(25, {LabelKind::exact, 1.0});
  y[3] = {LabelKind::graded, 0.5};
  CHECK_THROWS_AS(fit_head(feats, y, HeadFitConfig{}), Error);
}

TEST_CASE("fit_head is deterministic given the seed") {
  Rng rng(100);
  std::vector<FeatureVector> feats;
  std::vector<CorrectnessLabel> y;
  for (int i = 0; i < 120; ++i) {
    double x = rng.normal();
    feats.push_back(fv({x, x * x}, {"a", "b"}));
    y.push_back({LabelKind::exact, rng.bernoulli(sigmoid(x)) ? 1.0 : 0.0});
  }
  HeadFitConfig config;
  config.kind = HeadKind::mlp2;
  config.hidden = 6;
  config.seed = 9;
  config.max_iters = 300;
  HeadModel a = fit_head(feats, y, config);
  HeadModel b = fit_head(feats, y, config);
  CHECK(a.weights == b.weights);
  CHECK(a.temperature == b.temperature);
}

// ---------------------------------------------------------------------------
// Objective and gradients
// ---------------------------------------------------------------------------

namespace {

// Central finite differences with a relative step.
std::vector<double> fd_gradient(const HeadFitConfig& config,
                                const std::vector<FeatureVector>& feats,
                                const std::vector<double>& labels,
                                std::vector<double> params) {
  std::vector<double> g(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    double h = 1e-6 * std::max(1.0, std::fabs(params[j]));
    double save = params[j];
    params[j] = save + h;
    double up = head_objective(config, feats, labels, params);
    params[j] = save - h;
    double dn = head_objective(config, feats, labels, params);
    params[j] = save;
    g[j] = (up - dn) / (2.0 * h);
  }
  return g;
}

double rel_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(606);
  for (int trial = 0; trial < 10; ++trial) {
    int d = rng.uniform_int(1, 5);
    int n = rng.uniform_int(24, 64);
    std::vector<std::string> schema;
    for (int j = 0; j < d; ++j) schema.push_back("f" + std::to_string(j));
    std::vector<FeatureVector> feats;
    std::vector<double> labels;
    for (int i = 0; i < n; ++i) {
      std::vector<double> v;
      for (int j = 0; j < d; ++j) v.push_back(rng.normal());
      feats.push_back(fv(v, schema));
      labels.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
    }

    HeadFitConfig config;
    config.kind = trial % 2 == 0 ? HeadKind::logistic : HeadKind::mlp2;
    config.hidden = 4;
    config.alpha = 0.15;
    config.l2_lambda = 1e-3;
    config.temp_indices = {0};
    config.selective_enabled = trial % 3 == 0;

    std::vector<double> params(head_param_count(config, d));
    for (auto& p : params) p = rng.normal(0.0, 0.5);
    params.back() = rng.uniform(0.7, 1.4);  // temperature slot

    auto analytic = head_objective_gradient(config, feats, labels, params);
    auto numeric = fd_gradient(config, feats, labels, params);
    CHECK(rel_gap(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("loss decreases monotonically over accepted optimizer steps") {
  Rng rng(2090);
  std::vector<FeatureVector> feats;
  std::vector<CorrectnessLabel> y;
  for (int i = 0; i < 300; ++i) {
    double x = rng.normal();
    feats.push_back(fv({x, rng.normal()}, {"a", "b"}));
    y.push_back({LabelKind::exact, rng.bernoulli(sigmoid(1.2 * x)) ? 1.0 : 0.0});
  }
  HeadFitConfig config;
  config.seed = 12;
  config.alpha = 0.1;
  FitDiagnostics diag;
  fit_head(feats, y, config, nullptr, nullptr, &diag);
  REQUIRE(diag.loss_trajectory.size() >= 2);
  for (std::size_t i = 1; i < diag.loss_trajectory.size(); ++i)
    CHECK(diag.loss_trajectory[i] < diag.loss_trajectory[i - 1]);
}

TEST_CASE("objective forward pass agrees with predict_confidence") {
  // With alpha = 0 and no L2, the objective is exactly the mean BCE of the
  // confidences the prediction path would produce.
  Rng rng(3131);
  for (int trial = 0; trial < 8; ++trial) {
    int d = rng.uniform_int(1, 4);
    int n = 30;
    std::vector<std::string> schema;
    for (int j = 0; j < d; ++j) schema.push_back("f" + std::to_string(j));
    std::vector<FeatureVector> feats;
    std::vector<double> labels;
    for (int i = 0; i < n; ++i) {
      std::vector<double> v;
      for (int j = 0; j < d; ++j) v.push_back(rng.normal());
      feats.push_back(fv(v, schema));
      labels.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
    }
    HeadFitConfig config;
    config.kind = trial % 2 == 0 ? HeadKind::logistic : HeadKind::mlp2;
    config.hidden = 3;
    config.alpha = 0.0;
    config.l2_lambda = 0.0;
    config.temp_indices = {0};

    std::vector<double> params(head_param_count(config, d));
    for (auto& p : params) p = rng.normal(0.0, 0.4);
    params.back() = 1.7;  // temperature

    HeadModel m;
    m.kind = config.kind;
    m.d = d;
    m.hidden = config.kind == HeadKind::mlp2 ? config.hidden : 0;
    m.weights.assign(params.begin(), params.end() - 1);
    m.temperature = params.back();
    m.temp_indices = config.temp_indices;

    std::vector<double> conf;
    for (const auto& z : feats) conf.push_back(predict_confidence_values(m, nullptr, z.values));
    CHECK(head_objective(config, feats, labels, params) ==
          doctest::Approx(nll(conf, labels)).epsilon(1e-12));
  }
}

TEST_CASE("public soft_ece equals the objective's calibration term") {
  Rng rng(515);
  int d = 2, n = 48;
  std::vector<FeatureVector> feats;
  std::vector<double> labels;
  for (int i = 0; i < n; ++i) {
    feats.push_back(fv({rng.normal(), rng.normal()}, {"a", "b"}));
    labels.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
  }
  HeadFitConfig with_term;
  with_term.alpha = 1.0;
  with_term.l2_lambda = 0.0;
  with_term.temperature_enabled = false;
  HeadFitConfig without = with_term;
  without.alpha = 0.0;

  std::vector<double> params(head_param_count(with_term, d));
  Rng prng(99);
  for (auto& p : params) p = prng.normal(0.0, 0.5);

  HeadModel m;
  m.kind = HeadKind::logistic;
  m.d = d;
  m.weights = params;
  std::vector<double> conf;
  for (const auto& z : feats) conf.push_back(predict_confidence_values(m, nullptr, z.values));

  double term = head_objective(with_term, feats, labels, params) -
                head_objective(without, feats, labels, params);
  CHECK(term == doctest::Approx(soft_ece(conf, labels)).epsilon(1e-10));
}

TEST_CASE("soft_ece vanishes on perfectly matched batches") {
  std::vector<double> c(40, 0.5), r(40, 0.5);
  CHECK(soft_ece(c, r) == doctest::Approx(0.0).epsilon(1e-9));
  // And is large when confidence and accuracy disagree wholesale.
  std::vector<double> wrong(40, 0.0);
  CHECK(soft_ece(c, wrong) > 0.3);
}
