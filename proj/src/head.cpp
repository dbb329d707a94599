// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/head.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "unicr/error.hpp"
#include "unicr/metrics.hpp"
#include "unicr/rng.hpp"

namespace unicr {

namespace {

constexpr double kConfClampLo = 1e-6;
constexpr double kConfClampHi = 1.0 - 1e-6;
constexpr double kTemperatureMin = 0.05;
constexpr double kTemperatureMax = 20.0;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

double gelu_grad(double x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

}  // namespace

// ---------------------------------------------------------------------------
// Isotonic map
// ---------------------------------------------------------------------------

bool IsotonicMap::valid() const {
  for (std::size_t i = 1; i < breakpoints.size(); ++i) {
    if (breakpoints[i].first <= breakpoints[i - 1].first) return false;
    if (breakpoints[i].second < breakpoints[i - 1].second) return false;
  }
  return !breakpoints.empty();
}

double IsotonicMap::operator()(double c) const {
  if (breakpoints.empty()) return c;
  if (c <= breakpoints.front().first) return breakpoints.front().second;
  if (c >= breakpoints.back().first) return breakpoints.back().second;
  // Binary search for the segment containing c.
  std::size_t lo = 0, hi = breakpoints.size() - 1;
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    if (breakpoints[mid].first <= c)
      lo = mid;
    else
      hi = mid;
  }
  double x0 = breakpoints[lo].first, y0 = breakpoints[lo].second;
  double x1 = breakpoints[hi].first, y1 = breakpoints[hi].second;
  double t = (c - x0) / (x1 - x0);
  return y0 + t * (y1 - y0);
}

IsotonicMap fit_isotonic(std::span<const double> confidences,
                         std::span<const double> labels) {
  if (confidences.size() != labels.size())
    throw Error(ErrorCode::data_error, "confidences and labels differ in length");
  if (confidences.size() < 2)
    throw Error(ErrorCode::insufficient_data, "isotonic fit needs at least two points");

  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidences[a] < confidences[b];
  });

  // Pool tied confidences up front so block x-ranges stay disjoint.
  struct Block {
    double x_min, x_max, y, w;
  };
  std::vector<Block> blocks;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double x = confidences[order[i]];
    double sum = 0.0;
    while (j < order.size() && confidences[order[j]] == x) {
      sum += labels[order[j]];
      ++j;
    }
    double w = static_cast<double>(j - i);
    blocks.push_back(Block{x, x, sum / w, w});
    i = j;
  }

  // Pool adjacent violators.
  std::vector<Block> stack;
  for (const Block& b : blocks) {
    stack.push_back(b);
    while (stack.size() >= 2 && stack[stack.size() - 2].y > stack.back().y) {
      Block top = stack.back();
      stack.pop_back();
      Block& prev = stack.back();
      double w = prev.w + top.w;
      prev.y = (prev.y * prev.w + top.y * top.w) / w;
      prev.w = w;
      prev.x_max = top.x_max;
    }
  }

  IsotonicMap map;
  for (const Block& b : stack) {
    map.breakpoints.emplace_back(b.x_min, b.y);
    if (b.x_max > b.x_min) map.breakpoints.emplace_back(b.x_max, b.y);
  }
  return map;
}

// ---------------------------------------------------------------------------
// Head model basics
// ---------------------------------------------------------------------------

const char* to_string(HeadKind kind) {
  return kind == HeadKind::logistic ? "logistic" : "mlp2";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "logistic") return HeadKind::logistic;
  if (s == "mlp2") return HeadKind::mlp2;
  throw Error(ErrorCode::config_error, "unknown head kind \"" + s + "\"");
}

std::size_t HeadModel::expected_weight_count() const {
  if (kind == HeadKind::logistic) return static_cast<std::size_t>(d) + 1;
  return static_cast<std::size_t>(hidden) * d + hidden + hidden + 1;
}

void HeadModel::validate() const {
  if (d <= 0) throw Error(ErrorCode::schema_error, "head dimensionality must be positive");
  if (kind == HeadKind::mlp2 && hidden <= 0)
    throw Error(ErrorCode::schema_error, "mlp2 head needs a positive hidden width");
  if (weights.size() != expected_weight_count())
    throw Error(ErrorCode::schema_error, "head weight count does not match kind and d");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::schema_error, "temperature must be positive");
  for (int idx : temp_indices)
    if (idx < 0 || idx >= d)
      throw Error(ErrorCode::schema_error, "temperature feature index out of range");
  for (double w : weights)
    if (!std::isfinite(w)) throw Error(ErrorCode::schema_error, "non-finite head weight");
}

namespace {

// Raw head output before the sigmoid, on temperature-scaled values.
double head_logit(HeadKind kind, int d, int hidden, std::span<const double> weights,
                  double temperature, std::span<const int> temp_indices,
                  std::span<const double> values) {
  thread_local std::vector<double> scaled;
  scaled.assign(values.begin(), values.end());
  for (int j : temp_indices) scaled[j] /= temperature;

  if (kind == HeadKind::logistic) {
    double u = weights[d];
    for (int j = 0; j < d; ++j) u += weights[j] * scaled[j];
    return u;
  }
  const double* w1 = weights.data();
  const double* b1 = w1 + static_cast<std::size_t>(hidden) * d;
  const double* w2 = b1 + hidden;
  const double b2 = w2[hidden];
  double u = b2;
  for (int k = 0; k < hidden; ++k) {
    double a = b1[k];
    const double* row = w1 + static_cast<std::size_t>(k) * d;
    for (int j = 0; j < d; ++j) a += row[j] * scaled[j];
    u += w2[k] * gelu(a);
  }
  return u;
}

}  // namespace

double predict_confidence_values(const HeadModel& model, const IsotonicMap* iso,
                                 std::span<const double> values) {
  double u = head_logit(model.kind, model.d, model.hidden, model.weights,
                        model.temperature, model.temp_indices, values);
  double c = sigmoid(u);
  if (iso != nullptr && !iso->breakpoints.empty()) c = (*iso)(c);
  return std::clamp(c, kConfClampLo, kConfClampHi);
}

double predict_confidence(const HeadModel& model, const IsotonicMap* iso,
                          const FeatureVector& z) {
  if (static_cast<int>(z.values.size()) != model.d)
    throw Error(ErrorCode::schema_error, "feature vector dimensionality does not match head");
  if (!model.schema_hash.empty()) {
    // Rehash the vector's schema and compare against the model's.
    std::string joined;
    for (const auto& name : z.schema) {
      joined += name;
      joined += '\n';
    }
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : joined) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    if (model.schema_hash != buf)
      throw Error(ErrorCode::schema_error, "feature schema does not match the fitted head");
  }
  return predict_confidence_values(model, iso, z.values);
}

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

double soft_ece(std::span<const double> confidences, std::span<const double> labels) {
  const std::size_t n = confidences.size();
  if (n == 0) return 0.0;
  double nb[kEceBins] = {0}, cb[kEceBins] = {0}, ab[kEceBins] = {0};
  for (std::size_t i = 0; i < n; ++i) {
    double t = confidences[i] * kEceBins;
    int lo = std::max(0, static_cast<int>(std::floor(t)) - 1);
    int hi = std::min(kEceBins - 1, static_cast<int>(std::floor(t)) + 1);
    for (int b = lo; b <= hi; ++b) {
      double w = 1.0 - std::fabs(t - (b + 0.5));
      if (w <= 0.0) continue;
      nb[b] += w;
      cb[b] += w * confidences[i];
      ab[b] += w * labels[i];
    }
  }
  double W = 0.0, E = 0.0;
  for (int b = 0; b < kEceBins; ++b) {
    W += nb[b];
    E += std::fabs(cb[b] - ab[b]);
  }
  return W > 0.0 ? E / W : 0.0;
}

namespace {

struct ObjectiveTerms {
  const HeadFitConfig* config;
  int d = 0;
  std::size_t n = 0;
  bool fit_temperature = false;
  std::size_t weight_count = 0;  // head weights (excluding temperature)
};

ObjectiveTerms make_terms(const HeadFitConfig& config, int d, std::size_t n) {
  ObjectiveTerms t;
  t.config = &config;
  t.d = d;
  t.n = n;
  t.fit_temperature = config.temperature_enabled && !config.temp_indices.empty();
  if (config.kind == HeadKind::logistic)
    t.weight_count = static_cast<std::size_t>(d) + 1;
  else
    t.weight_count =
        static_cast<std::size_t>(config.hidden) * d + 2 * config.hidden + 1;
  return t;
}

// L2 applies to multiplicative weights only, not biases or temperature.
void l2_mask(const HeadFitConfig& config, int d, std::vector<char>& mask) {
  if (config.kind == HeadKind::logistic) {
    mask.assign(static_cast<std::size_t>(d) + 1, 1);
    mask.back() = 0;  // bias
  } else {
    std::size_t h = config.hidden;
    mask.assign(h * d + 2 * h + 1, 0);
    std::fill(mask.begin(), mask.begin() + h * d, 1);          // W1
    std::fill(mask.begin() + h * d + h, mask.begin() + h * d + 2 * h, 1);  // w2
  }
}

/// Evaluates the objective and (optionally) its gradient. The objective is
///   mean BCE + alpha * softECE + 0.5 * l2 * ||w||^2
/// plus the optional soft selective term and coverage-smoothing penalty.
double evaluate(const ObjectiveTerms& t, const std::vector<FeatureVector>& features,
                std::span<const double> labels, std::span<const double> params,
                std::vector<double>* grad) {
  const HeadFitConfig& cfg = *t.config;
  const int d = t.d;
  const std::size_t n = t.n;
  const int hidden = cfg.hidden;
  const double T = t.fit_temperature ? params[t.weight_count] : 1.0;
  std::span<const double> w = params.subspan(0, t.weight_count);

  std::vector<double> conf(n);
  // mlp2 caches pre-activations for backprop.
  std::vector<double> acts;
  if (cfg.kind == HeadKind::mlp2) acts.resize(n * static_cast<std::size_t>(hidden));

  double bce_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& z = features[i].values;
    double u;
    if (cfg.kind == HeadKind::logistic) {
      u = w[d];
      for (int j = 0; j < d; ++j) u += w[j] * z[j];
      // temperature rescales the designated features
      for (int j : cfg.temp_indices) u += w[j] * (z[j] / T - z[j]);
    } else {
      const double* w1 = w.data();
      const double* b1 = w1 + static_cast<std::size_t>(hidden) * d;
      const double* w2 = b1 + hidden;
      const double b2 = w2[hidden];
      u = b2;
      for (int k = 0; k < hidden; ++k) {
        double a = b1[k];
        const double* row = w1 + static_cast<std::size_t>(k) * d;
        for (int j = 0; j < d; ++j) a += row[j] * z[j];
        for (int j : cfg.temp_indices) a += row[j] * (z[j] / T - z[j]);
        acts[i * hidden + k] = a;
        u += w2[k] * gelu(a);
      }
    }
    conf[i] = sigmoid(u);
    bce_sum += softplus(u) - labels[i] * u;
  }

  double loss = bce_sum / static_cast<double>(n);

  // Soft-binned ECE term, with its gradient w.r.t. each confidence.
  std::vector<double> dloss_dc(grad ? n : 0, 0.0);
  if (cfg.alpha > 0.0) {
    double nb[kEceBins] = {0}, cb[kEceBins] = {0}, ab[kEceBins] = {0};
    for (std::size_t i = 0; i < n; ++i) {
      double x = conf[i] * kEceBins;
      int base = static_cast<int>(std::floor(x));
      for (int b = std::max(0, base - 1); b <= std::min(kEceBins - 1, base + 1); ++b) {
        double wgt = 1.0 - std::fabs(x - (b + 0.5));
        if (wgt <= 0.0) continue;
        nb[b] += wgt;
        cb[b] += wgt * conf[i];
        ab[b] += wgt * labels[i];
      }
    }
    double W = 0.0, E = 0.0;
    for (int b = 0; b < kEceBins; ++b) {
      W += nb[b];
      E += std::fabs(cb[b] - ab[b]);
    }
    double sece = W > 0.0 ? E / W : 0.0;
    loss += cfg.alpha * sece;
    if (grad && W > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        double x = conf[i] * kEceBins;
        int base = static_cast<int>(std::floor(x));
        double dE = 0.0, dW = 0.0;
        for (int b = std::max(0, base - 1); b <= std::min(kEceBins - 1, base + 1); ++b) {
          double delta = x - (b + 0.5);
          double wgt = 1.0 - std::fabs(delta);
          if (wgt <= 0.0) continue;
          double dwgt = (delta > 0.0 ? -1.0 : (delta < 0.0 ? 1.0 : 0.0)) * kEceBins;
          double sb = (cb[b] > ab[b]) ? 1.0 : (cb[b] < ab[b] ? -1.0 : 0.0);
          dE += sb * (wgt + dwgt * conf[i] - dwgt * labels[i]);
          dW += dwgt;
        }
        dloss_dc[i] += cfg.alpha * (dE - sece * dW) / W;
      }
    }
  }

  // Optional soft selective term around the working threshold 1 - rho.
  if (cfg.selective_enabled) {
    const double tau_w = 1.0 - cfg.rho;
    const double width = cfg.selective_soft_width;
    double sel = 0.0, cov = 0.0;
    std::vector<double> gate(grad ? n : 0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = sigmoid((conf[i] - tau_w) / width);
      sel += s * (1.0 - labels[i]);
      cov += s;
      if (grad) gate[i] = s * (1.0 - s) / width;
    }
    sel /= static_cast<double>(n);
    cov /= static_cast<double>(n);
    double shortfall = cfg.kappa - cov;
    loss += sel + cfg.beta * std::max(0.0, shortfall);
    if (grad) {
      double cov_gate = shortfall > 0.0 ? -cfg.beta : 0.0;
      for (std::size_t i = 0; i < n; ++i)
        dloss_dc[i] += ((1.0 - labels[i]) + cov_gate) / static_cast<double>(n) * gate[i];
    }
  }

  // Optional coverage smoothing: piecewise-constant in the parameters, so it
  // shapes the line search but contributes no gradient.
  if (cfg.coverage_smoothing_enabled) {
    loss += cfg.smoothing_weight *
            coverage_smoothing_penalty(conf, 1.0 - cfg.rho, cfg.smoothing_delta);
  }

  // L2 on multiplicative weights.
  std::vector<char> mask;
  l2_mask(cfg, d, mask);
  if (cfg.l2_lambda > 0.0) {
    double ss = 0.0;
    for (std::size_t j = 0; j < t.weight_count; ++j)
      if (mask[j]) ss += w[j] * w[j];
    loss += 0.5 * cfg.l2_lambda * ss;
  }

  if (!grad) return loss;

  grad->assign(params.size(), 0.0);
  std::vector<double>& g = *grad;
  double dT = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double gu = (conf[i] - labels[i]) / static_cast<double>(n);
    gu += dloss_dc[i] * conf[i] * (1.0 - conf[i]);
    const auto& z = features[i].values;
    if (cfg.kind == HeadKind::logistic) {
      for (int j = 0; j < d; ++j) g[j] += gu * z[j];
      for (int j : cfg.temp_indices) g[j] += gu * (z[j] / T - z[j]);
      g[d] += gu;
      if (t.fit_temperature)
        for (int j : cfg.temp_indices) dT += gu * w[j] * (-z[j] / (T * T));
    } else {
      const double* w1 = w.data();
      const double* w2 = w.data() + static_cast<std::size_t>(hidden) * d + hidden;
      double* g1 = g.data();
      double* gb1 = g1 + static_cast<std::size_t>(hidden) * d;
      double* g2 = gb1 + hidden;
      for (int k = 0; k < hidden; ++k) {
        double a = acts[i * hidden + k];
        double ga = gu * w2[k] * gelu_grad(a);
        g2[k] += gu * gelu(a);
        gb1[k] += ga;
        double* grow = g1 + static_cast<std::size_t>(k) * d;
        const double* row = w1 + static_cast<std::size_t>(k) * d;
        for (int j = 0; j < d; ++j) grow[j] += ga * z[j];
        for (int j : cfg.temp_indices) grow[j] += ga * (z[j] / T - z[j]);
        if (t.fit_temperature)
          for (int j : cfg.temp_indices) dT += ga * row[j] * (-z[j] / (T * T));
      }
      g[t.weight_count - 1] += gu;  // b2
    }
  }
  if (cfg.l2_lambda > 0.0)
    for (std::size_t j = 0; j < t.weight_count; ++j)
      if (mask[j]) g[j] += cfg.l2_lambda * w[j];
  if (t.fit_temperature) g[t.weight_count] = dT;
  return loss;
}

}  // namespace

std::size_t head_param_count(const HeadFitConfig& config, int d) {
  ObjectiveTerms t = make_terms(config, d, 0);
  return t.weight_count + (t.fit_temperature ? 1 : 0);
}

double head_objective(const HeadFitConfig& config,
                      const std::vector<FeatureVector>& features,
                      std::span<const double> labels,
                      std::span<const double> params) {
  ObjectiveTerms t = make_terms(config, static_cast<int>(features.at(0).values.size()),
                                features.size());
  return evaluate(t, features, labels, params, nullptr);
}

std::vector<double> head_objective_gradient(const HeadFitConfig& config,
                                            const std::vector<FeatureVector>& features,
                                            std::span<const double> labels,
                                            std::span<const double> params) {
  ObjectiveTerms t = make_terms(config, static_cast<int>(features.at(0).values.size()),
                                features.size());
  std::vector<double> grad;
  evaluate(t, features, labels, params, &grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace {

std::string schema_hash_of(const std::vector<std::string>& schema) {
  std::string joined;
  for (const auto& name : schema) {
    joined += name;
    joined += '\n';
  }
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : joined) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

HeadModel intercept_only_model(int d, const HeadFitConfig& config,
                               const std::string& hash, double rate, std::size_t n) {
  // Laplace-smoothed base rate keeps the logit bounded.
  double smoothed = (rate * static_cast<double>(n) + 1.0) / (static_cast<double>(n) + 2.0);
  HeadModel m;
  m.kind = HeadKind::logistic;
  m.d = d;
  m.weights.assign(static_cast<std::size_t>(d) + 1, 0.0);
  m.weights.back() = std::log(smoothed / (1.0 - smoothed));
  m.temperature = 1.0;
  m.l2_lambda = config.l2_lambda;
  m.seed = config.seed;
  m.schema_hash = hash;
  return m;
}

double validation_ece(const HeadFitConfig& cfg, int d,
                      const std::vector<FeatureVector>& feats,
                      std::span<const double> labels,
                      std::span<const double> params, std::size_t weight_count,
                      bool fit_temperature) {
  HeadModel probe;
  probe.kind = cfg.kind;
  probe.d = d;
  probe.hidden = cfg.kind == HeadKind::mlp2 ? cfg.hidden : 0;
  probe.weights.assign(params.begin(), params.begin() + weight_count);
  probe.temperature = fit_temperature ? params[weight_count] : 1.0;
  probe.temp_indices = cfg.temp_indices;
  std::vector<double> conf(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i)
    conf[i] = predict_confidence_values(probe, nullptr, feats[i].values);
  return ece(conf, labels, EceScheme::adaptive15);
}

}  // namespace

HeadModel fit_head(const std::vector<FeatureVector>& features,
                   const std::vector<CorrectnessLabel>& labels,
                   const HeadFitConfig& config,
                   const std::vector<FeatureVector>* val_features,
                   const std::vector<CorrectnessLabel>* val_labels,
                   FitDiagnostics* diagnostics) {
  if (features.size() != labels.size())
    throw Error(ErrorCode::data_error, "features and labels differ in length");
  if (features.size() < 20)
    throw Error(ErrorCode::insufficient_data, "head fit needs at least 20 examples");
  const int d = static_cast<int>(features[0].values.size());
  if (d == 0) throw Error(ErrorCode::schema_error, "empty feature vectors");
  for (const auto& f : features)
    if (f.schema != features[0].schema)
      throw Error(ErrorCode::schema_error, "inconsistent feature schemas in training data");
  for (int j : config.temp_indices)
    if (j < 0 || j >= d)
      throw Error(ErrorCode::config_error, "temperature feature index out of range");

  std::vector<double> y = label_values(labels);
  const std::string hash = schema_hash_of(features[0].schema);

  // One-class (or constant graded) labels: intercept-only head.
  double y_min = *std::min_element(y.begin(), y.end());
  double y_max = *std::max_element(y.begin(), y.end());
  if (y_min == y_max) {
    return intercept_only_model(d, config, hash,
                                std::accumulate(y.begin(), y.end(), 0.0) / y.size(),
                                y.size());
  }

  // Validation slice for early stopping: caller-provided, else an internal
  // seeded holdout when there is enough data.
  std::vector<FeatureVector> holdout_feats;
  std::vector<double> holdout_labels;
  const std::vector<FeatureVector>* train_feats = &features;
  std::vector<double> train_labels = y;
  std::vector<FeatureVector> train_feats_own;
  if (val_features != nullptr && val_labels != nullptr && !val_features->empty()) {
    holdout_feats = *val_features;
    holdout_labels = label_values(*val_labels);
  } else if (config.early_stopping && features.size() >= 50) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(config.seed), 0x4f5d));
    std::vector<std::size_t> idx(features.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    std::size_t n_hold = std::max<std::size_t>(10, features.size() / 5);
    train_feats_own.clear();
    train_labels.clear();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (i < n_hold) {
        holdout_feats.push_back(features[idx[i]]);
        holdout_labels.push_back(y[idx[i]]);
      } else {
        train_feats_own.push_back(features[idx[i]]);
        train_labels.push_back(y[idx[i]]);
      }
    }
    train_feats = &train_feats_own;
  }

  ObjectiveTerms terms = make_terms(config, d, train_feats->size());
  std::vector<double> params(terms.weight_count + (terms.fit_temperature ? 1 : 0), 0.0);
  if (config.kind == HeadKind::mlp2) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(config.seed), 0x11ad));
    double s1 = std::sqrt(2.0 / d);
    std::size_t h = config.hidden;
    for (std::size_t j = 0; j < h * static_cast<std::size_t>(d); ++j)
      params[j] = rng.normal(0.0, s1);
    double s2 = std::sqrt(1.0 / static_cast<double>(h));
    for (std::size_t j = h * d + h; j < h * d + 2 * h; ++j) params[j] = rng.normal(0.0, s2);
  }
  if (terms.fit_temperature) params[terms.weight_count] = 1.0;

  auto clamp_temp = [&](std::vector<double>& p) {
    if (terms.fit_temperature)
      p[terms.weight_count] =
          std::clamp(p[terms.weight_count], kTemperatureMin, kTemperatureMax);
  };

  double loss = evaluate(terms, *train_feats, train_labels, params, nullptr);
  if (diagnostics != nullptr) diagnostics->loss_trajectory.push_back(loss);
  std::vector<double> grad, candidate;
  double lr = 1.0;

  const bool track_val = !holdout_feats.empty() && config.early_stopping;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = params;
  int best_iter = 0;
  int evals_since_best = 0;

  int iter = 0;
  for (iter = 1; iter <= config.max_iters; ++iter) {
    evaluate(terms, *train_feats, train_labels, params, &grad);
    double gmax = 0.0;
    for (double gj : grad) gmax = std::max(gmax, std::fabs(gj));
    if (gmax < config.grad_tol) break;

    bool accepted = false;
    while (lr >= 1e-14) {
      candidate = params;
      for (std::size_t j = 0; j < params.size(); ++j) candidate[j] -= lr * grad[j];
      clamp_temp(candidate);
      double cand_loss = evaluate(terms, *train_feats, train_labels, candidate, nullptr);
      if (cand_loss < loss) {
        params.swap(candidate);
        loss = cand_loss;
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    lr = std::min(lr * 1.5, 1e3);
    if (diagnostics != nullptr) diagnostics->loss_trajectory.push_back(loss);

    if (track_val && iter % config.eval_interval == 0) {
      double v = validation_ece(config, d, holdout_feats, holdout_labels, params,
                                terms.weight_count, terms.fit_temperature);
      if (v < best_val - 1e-6) {
        best_val = v;
        best_params = params;
        best_iter = iter;
        evals_since_best = 0;
      } else {
        ++evals_since_best;
      }
      if (iter >= config.min_iters && evals_since_best >= config.patience_evals) break;
    }
  }

  if (diagnostics != nullptr) diagnostics->iterations = iter;
  if (track_val && best_iter > 0) {
    // Keep the final iterate unless the earlier one was meaningfully better
    // on held-out adaptive ECE.
    double final_val = validation_ece(config, d, holdout_feats, holdout_labels, params,
                                      terms.weight_count, terms.fit_temperature);
    if (best_val < final_val - 1e-4) params = best_params;
  }

  HeadModel model;
  model.kind = config.kind;
  model.d = d;
  model.hidden = config.kind == HeadKind::mlp2 ? config.hidden : 0;
  model.weights.assign(params.begin(), params.begin() + terms.weight_count);
  model.temperature = terms.fit_temperature ? params[terms.weight_count] : 1.0;
  model.temp_indices = config.temp_indices;
  model.l2_lambda = config.l2_lambda;
  model.seed = config.seed;
  model.schema_hash = hash;
  model.validate();
  if (diagnostics != nullptr && !holdout_feats.empty())
    diagnostics->holdout_adaptive_ece =
        validation_ece(config, d, holdout_feats, holdout_labels, params,
                       terms.weight_count, terms.fit_temperature);
  return model;
}

}  // namespace unicr
