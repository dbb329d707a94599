// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unicr/types.hpp"

namespace unicr {

// Sentinel threshold meaning "abstain always": no attainable confidence
// reaches it (confidences are clamped to 1 - 1e-6).
inline constexpr double kAbstainAlwaysTau = 1.0 + 1e-6;

struct SelectiveOutcomeSet {
  std::vector<double> confidences;
  std::vector<CorrectnessLabel> labels;
  std::vector<bool> answered_mask;
};

struct RiskCoverage {
  double risk = 0.0;
  double coverage = 0.0;
  bool zero_coverage = false;
};

/// Empirical selective risk and coverage. Zero answered examples reports
/// risk 0 with the zero_coverage flag rather than NaN.
RiskCoverage selective_risk(const SelectiveOutcomeSet& outcomes);

/// Convenience overload: answer iff confidence >= tau.
RiskCoverage selective_risk_at(std::span<const double> confidences,
                               std::span<const double> losses, double tau);

/// Bayes rule threshold for rejection cost lambda: answer iff c >= 1-lambda.
double bayes_threshold(double lambda);

/// Largest-coverage threshold subject to empirical selective risk <= rho,
/// swept over {0} plus the observed confidences. Ties in coverage resolve to
/// the smaller tau. Returns kAbstainAlwaysTau when no threshold satisfies
/// the constraint.
double validation_threshold(std::span<const double> confidences,
                            std::span<const double> labels, double rho);

enum class QuantileSmoothing { none, interpolated };

const char* to_string(QuantileSmoothing s);
QuantileSmoothing smoothing_from_string(const std::string& s);

struct ConformalResult {
  double tau = 0.0;
  bool no_errors_observed = false;
};

/// Split-conformal threshold from the nonconformity scores 1-c among the
/// calibration errors: tau = 1 - Q_{1-alpha} with the conservative
/// ceil((1-alpha)(|E|+1)) order statistic (clamped to |E|), optionally
/// interpolating between neighboring order statistics. An empty error set
/// yields tau = 0 with the no_errors_observed flag.
ConformalResult conformal_threshold(std::span<const double> confidences,
                                    std::span<const double> labels, double alpha,
                                    QuantileSmoothing smoothing);

/// Soft risk control for graded labels: per-example loss 1{c >= tau}(1-r).
/// Returns the maximum-coverage tau over the candidate grid ({0, working_tau}
/// plus the observed confidences) whose conservative bound
///   (sum_i L_i(tau) + 1) / (m+1) <= alpha * coverage(tau)
/// holds, or kAbstainAlwaysTau when none does.
double soft_conformal_threshold(std::span<const double> confidences,
                                std::span<const double> graded_labels,
                                double working_tau, double alpha);

// ---------------------------------------------------------------------------
// Threshold policies
// ---------------------------------------------------------------------------

enum class PolicyMode { validation, conformal, conformal_bucketed };

const char* to_string(PolicyMode mode);
PolicyMode policy_mode_from_string(const std::string& s);

struct PolicyBucket {
  std::string name;
  double lo = 0.0;  // evidence-coverage range [lo, hi); last bucket closes at 1
  double hi = 1.0;
  double tau = 0.0;
  int count = 0;
  bool inherited = false;  // undersized bucket fell back to the global tau
};

struct ThresholdPolicy {
  PolicyMode mode = PolicyMode::validation;
  double global_tau = 0.0;
  std::vector<PolicyBucket> buckets;  // populated iff mode == conformal_bucketed
  double alpha_or_rho = 0.05;
  int calibration_size = 0;
  QuantileSmoothing smoothing = QuantileSmoothing::none;
  bool no_errors_observed = false;

  /// Threshold for a record, given its evidence coverage when bucketed.
  double tau_for(std::optional<double> evidence_coverage) const;
  bool abstain_always() const { return global_tau >= kAbstainAlwaysTau; }
  void validate() const;
};

/// Per-bucket conformal thresholds over evidence-coverage ranges delimited
/// by bucket_edges (interior edges in (0,1), ascending). Buckets smaller
/// than min_bucket_size inherit the global threshold.
ThresholdPolicy bucketed_conformal(std::span<const double> confidences,
                                   std::span<const double> labels,
                                   std::span<const double> evidence_coverage,
                                   double alpha,
                                   std::span<const double> bucket_edges,
                                   QuantileSmoothing smoothing,
                                   int min_bucket_size = 30);

// ---------------------------------------------------------------------------
// Learn-then-test split
// ---------------------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> tune;
  std::vector<std::size_t> calibrate;
};

/// Seeded deterministic partition into train/tune/calibrate. Fractions must
/// sum to 1 and every split must be non-empty.
SplitIndices ltt_split(std::size_t n, double train_frac, double tune_frac,
                       double calibrate_frac, std::uint64_t seed);

}  // namespace unicr
