// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unicr/error.hpp"
#include "unicr/metrics.hpp"
#include "unicr/rng.hpp"

namespace unicr {

RiskCoverage selective_risk(const SelectiveOutcomeSet& outcomes) {
  const std::size_t n = outcomes.confidences.size();
  if (outcomes.labels.size() != n || outcomes.answered_mask.size() != n)
    throw Error(ErrorCode::data_error, "selective outcome set fields differ in length");
  double loss_sum = 0.0;
  std::size_t answered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!outcomes.answered_mask[i]) continue;
    ++answered;
    loss_sum += 1.0 - outcomes.labels[i].value;
  }
  RiskCoverage rc;
  rc.coverage = n ? static_cast<double>(answered) / static_cast<double>(n) : 0.0;
  if (answered == 0) {
    rc.risk = 0.0;
    rc.zero_coverage = true;  // reported as 0 with a flag, never NaN
  } else {
    rc.risk = loss_sum / static_cast<double>(answered);
  }
  return rc;
}

RiskCoverage selective_risk_at(std::span<const double> confidences,
                               std::span<const double> losses, double tau) {
  if (confidences.size() != losses.size())
    throw Error(ErrorCode::data_error, "confidences and losses differ in length");
  double loss_sum = 0.0;
  std::size_t answered = 0;
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    if (confidences[i] < tau) continue;
    ++answered;
    loss_sum += losses[i];
  }
  RiskCoverage rc;
  rc.coverage = confidences.empty()
                    ? 0.0
                    : static_cast<double>(answered) / static_cast<double>(confidences.size());
  if (answered == 0) {
    rc.risk = 0.0;
    rc.zero_coverage = true;
  } else {
    rc.risk = loss_sum / static_cast<double>(answered);
  }
  return rc;
}

double bayes_threshold(double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw Error(ErrorCode::config_error, "rejection cost must lie in [0,1]");
  return 1.0 - lambda;
}

double validation_threshold(std::span<const double> confidences,
                            std::span<const double> labels, double rho) {
  if (confidences.size() != labels.size())
    throw Error(ErrorCode::data_error, "confidences and labels differ in length");
  if (confidences.empty())
    throw Error(ErrorCode::insufficient_data, "validation threshold needs data");
  if (rho < 0.0 || rho > 1.0)
    throw Error(ErrorCode::config_error, "risk budget must lie in [0,1]");

  std::vector<double> losses(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) losses[i] = 1.0 - labels[i];

  // The empirical objective is piecewise-constant between observed values,
  // so {0} plus the observed confidences is a lossless candidate grid.
  std::vector<double> grid(confidences.begin(), confidences.end());
  grid.push_back(0.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  double best_tau = kAbstainAlwaysTau;
  double best_cov = -1.0;
  for (double tau : grid) {
    RiskCoverage rc = selective_risk_at(confidences, losses, tau);
    if (rc.zero_coverage || rc.risk > rho) continue;
    // Maximize coverage; at equal coverage prefer the smaller tau.
    if (rc.coverage > best_cov + 1e-15 ||
        (std::fabs(rc.coverage - best_cov) <= 1e-15 && tau < best_tau)) {
      best_cov = rc.coverage;
      best_tau = tau;
    }
  }
  return best_tau;
}

const char* to_string(QuantileSmoothing s) {
  return s == QuantileSmoothing::none ? "none" : "interpolated";
}

QuantileSmoothing smoothing_from_string(const std::string& s) {
  if (s == "none") return QuantileSmoothing::none;
  if (s == "interpolated") return QuantileSmoothing::interpolated;
  throw Error(ErrorCode::config_error, "unknown smoothing \"" + s + "\"");
}

ConformalResult conformal_threshold(std::span<const double> confidences,
                                    std::span<const double> labels, double alpha,
                                    QuantileSmoothing smoothing) {
  if (confidences.size() != labels.size())
    throw Error(ErrorCode::data_error, "confidences and labels differ in length");
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw Error(ErrorCode::config_error, "alpha must lie in (0,1)");

  // Nonconformity scores 1-c among the calibration errors.
  std::vector<double> scores;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0)
      throw Error(ErrorCode::data_error, "conformal threshold needs binary labels");
    if (labels[i] == 0.0) scores.push_back(1.0 - confidences[i]);
  }

  ConformalResult out;
  if (scores.empty()) {
    out.tau = 0.0;
    out.no_errors_observed = true;  // answer everything, loudly
    return out;
  }
  std::sort(scores.begin(), scores.end());
  const std::size_t m = scores.size();
  const double h = (1.0 - alpha) * static_cast<double>(m + 1);

  double q;
  if (smoothing == QuantileSmoothing::none) {
    std::size_t k = static_cast<std::size_t>(std::ceil(h));
    k = std::clamp<std::size_t>(k, 1, m);
    q = scores[k - 1];
  } else {
    // Interpolate between the neighboring order statistics of the same
    // conservative index.
    if (h <= 1.0) {
      q = scores[0];
    } else if (h >= static_cast<double>(m)) {
      q = scores[m - 1];
    } else {
      double lo = std::floor(h);
      std::size_t k_lo = static_cast<std::size_t>(lo);
      double frac = h - lo;
      q = scores[k_lo - 1] + frac * (scores[k_lo] - scores[k_lo - 1]);
    }
  }
  out.tau = 1.0 - q;
  return out;
}

double soft_conformal_threshold(std::span<const double> confidences,
                                std::span<const double> graded_labels,
                                double working_tau, double alpha) {
  if (confidences.size() != graded_labels.size())
    throw Error(ErrorCode::data_error, "confidences and labels differ in length");
  if (confidences.empty())
    throw Error(ErrorCode::insufficient_data, "soft conformal threshold needs data");
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw Error(ErrorCode::config_error, "alpha must lie in (0,1)");
  for (double r : graded_labels)
    if (!(r >= 0.0 && r <= 1.0))
      throw Error(ErrorCode::data_error, "graded labels must lie in [0,1]");

  const double m = static_cast<double>(confidences.size());
  std::vector<double> grid(confidences.begin(), confidences.end());
  grid.push_back(0.0);
  grid.push_back(working_tau);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  // Maximum-coverage tau whose conservative bound holds: scan the grid
  // upward and return the first feasible candidate.
  for (double tau : grid) {
    double loss_sum = 0.0;
    std::size_t answered = 0;
    for (std::size_t i = 0; i < confidences.size(); ++i) {
      if (confidences[i] < tau) continue;
      ++answered;
      loss_sum += 1.0 - graded_labels[i];
    }
    double coverage = static_cast<double>(answered) / m;
    if ((loss_sum + 1.0) / (m + 1.0) <= alpha * coverage) return tau;
  }
  return kAbstainAlwaysTau;
}

// ---------------------------------------------------------------------------
// Threshold policies
// ---------------------------------------------------------------------------

const char* to_string(PolicyMode mode) {
  switch (mode) {
    case PolicyMode::validation: return "validation";
    case PolicyMode::conformal: return "conformal";
    case PolicyMode::conformal_bucketed: return "conformal_bucketed";
  }
  return "?";
}

PolicyMode policy_mode_from_string(const std::string& s) {
  if (s == "validation") return PolicyMode::validation;
  if (s == "conformal") return PolicyMode::conformal;
  if (s == "conformal_bucketed" || s == "bucketed") return PolicyMode::conformal_bucketed;
  throw Error(ErrorCode::config_error, "unknown policy mode \"" + s + "\"");
}

double ThresholdPolicy::tau_for(std::optional<double> evidence_coverage) const {
  if (mode != PolicyMode::conformal_bucketed) return global_tau;
  if (!evidence_coverage.has_value())
    throw Error(ErrorCode::schema_error,
                "bucketed policy needs an evidence-coverage value per record");
  double cov = *evidence_coverage;
  for (const auto& b : buckets) {
    bool last = (&b == &buckets.back());
    if (cov >= b.lo && (cov < b.hi || (last && cov <= b.hi))) return b.tau;
  }
  return global_tau;
}

void ThresholdPolicy::validate() const {
  if (!(alpha_or_rho > 0.0) || !(alpha_or_rho < 1.0)) {
    if (mode != PolicyMode::validation || alpha_or_rho < 0.0 || alpha_or_rho > 1.0)
      throw Error(ErrorCode::config_error, "alpha/rho outside its valid range");
  }
  if (mode == PolicyMode::conformal_bucketed) {
    if (buckets.empty())
      throw Error(ErrorCode::config_error, "bucketed policy has no buckets");
    double expect_lo = 0.0;
    for (const auto& b : buckets) {
      if (std::fabs(b.lo - expect_lo) > 1e-12 || b.hi <= b.lo)
        throw Error(ErrorCode::config_error, "bucket predicates must partition [0,1]");
      expect_lo = b.hi;
    }
    if (std::fabs(expect_lo - 1.0) > 1e-12)
      throw Error(ErrorCode::config_error, "bucket predicates must cover up to 1");
  } else if (!buckets.empty()) {
    throw Error(ErrorCode::config_error, "non-bucketed policy carries buckets");
  }
}

ThresholdPolicy bucketed_conformal(std::span<const double> confidences,
                                   std::span<const double> labels,
                                   std::span<const double> evidence_coverage,
                                   double alpha,
                                   std::span<const double> bucket_edges,
                                   QuantileSmoothing smoothing,
                                   int min_bucket_size) {
  const std::size_t n = confidences.size();
  if (n == 0) throw Error(ErrorCode::insufficient_data, "empty calibration set");
  if (labels.size() != n || evidence_coverage.size() != n)
    throw Error(ErrorCode::data_error, "calibration fields differ in length");
  for (std::size_t i = 1; i < bucket_edges.size(); ++i)
    if (bucket_edges[i] <= bucket_edges[i - 1])
      throw Error(ErrorCode::config_error, "bucket edges must be strictly increasing");
  for (double e : bucket_edges)
    if (e <= 0.0 || e >= 1.0)
      throw Error(ErrorCode::config_error, "bucket edges must lie in (0,1)");

  ConformalResult global = conformal_threshold(confidences, labels, alpha, smoothing);

  ThresholdPolicy policy;
  policy.mode = PolicyMode::conformal_bucketed;
  policy.global_tau = global.tau;
  policy.no_errors_observed = global.no_errors_observed;
  policy.alpha_or_rho = alpha;
  policy.calibration_size = static_cast<int>(n);
  policy.smoothing = smoothing;

  std::vector<double> lows{0.0};
  for (double e : bucket_edges) lows.push_back(e);
  for (std::size_t b = 0; b < lows.size(); ++b) {
    PolicyBucket bucket;
    bucket.lo = lows[b];
    bucket.hi = (b + 1 < lows.size()) ? lows[b + 1] : 1.0;
    std::ostringstream name;
    name << "cov[" << bucket.lo << "," << bucket.hi << (b + 1 < lows.size() ? ")" : "]");
    bucket.name = name.str();

    std::vector<double> conf_b, lab_b;
    for (std::size_t i = 0; i < n; ++i) {
      double cov = evidence_coverage[i];
      bool last = (b + 1 == lows.size());
      if (cov >= bucket.lo && (cov < bucket.hi || (last && cov <= bucket.hi))) {
        conf_b.push_back(confidences[i]);
        lab_b.push_back(labels[i]);
      }
    }
    bucket.count = static_cast<int>(conf_b.size());
    if (bucket.count < min_bucket_size) {
      bucket.tau = global.tau;  // undersized: inherit the global threshold
      bucket.inherited = true;
    } else {
      bucket.tau = conformal_threshold(conf_b, lab_b, alpha, smoothing).tau;
    }
    policy.buckets.push_back(std::move(bucket));
  }
  policy.validate();
  return policy;
}

// ---------------------------------------------------------------------------
// Learn-then-test split
// ---------------------------------------------------------------------------

SplitIndices ltt_split(std::size_t n, double train_frac, double tune_frac,
                       double calibrate_frac, std::uint64_t seed) {
  double sum = train_frac + tune_frac + calibrate_frac;
  if (std::fabs(sum - 1.0) > 1e-9)
    throw Error(ErrorCode::config_error, "split fractions must sum to 1");
  if (train_frac < 0.0 || tune_frac < 0.0 || calibrate_frac < 0.0)
    throw Error(ErrorCode::config_error, "split fractions must be nonnegative");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0x517f));
  rng.shuffle(idx);

  std::size_t n_train = static_cast<std::size_t>(std::floor(train_frac * n));
  std::size_t n_tune = static_cast<std::size_t>(std::floor(tune_frac * n));
  std::size_t n_cal = n - n_train - n_tune;
  if (n_train == 0 || n_tune == 0 || n_cal == 0)
    throw Error(ErrorCode::insufficient_data,
                "every split must be non-empty; got train=" + std::to_string(n_train) +
                    " tune=" + std::to_string(n_tune) + " calibrate=" + std::to_string(n_cal));

  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + n_train);
  out.tune.assign(idx.begin() + n_train, idx.begin() + n_train + n_tune);
  out.calibrate.assign(idx.begin() + n_train + n_tune, idx.end());
  return out;
}

}  // namespace unicr
