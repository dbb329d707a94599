// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "unicr/evidence.hpp"
#include "unicr/risk.hpp"
#include "unicr/types.hpp"

namespace unicr {

// ---------------------------------------------------------------------------
// Risk-coverage analysis
// ---------------------------------------------------------------------------

struct RCPoint {
  double tau = 0.0;
  double coverage = 0.0;
  double risk = 0.0;
};

/// Empirical risk-coverage curve: one point per distinct confidence
/// threshold, ordered by decreasing coverage (the full-coverage point first).
struct RCCurve {
  std::vector<RCPoint> points;
};

RCCurve rc_curve(std::span<const double> confidences, std::span<const double> labels);

/// Trapezoidal integral of risk over coverage in [0,1]. The curve is closed
/// at coverage 0 with the full-coverage risk value, which makes the integral
/// equal the mean of prefix error rates in confidence order when confidences
/// are distinct.
double aurc(const RCCurve& curve);

/// Maximum coverage among curve points with risk <= rho; 0 when none qualify.
double coverage_at_risk(const RCCurve& curve, double rho);

/// Fraction of B seeded bootstrap resamples whose selective risk at the
/// policy threshold exceeds alpha. evidence_coverage is required for
/// bucketed policies and ignored otherwise.
double bootstrap_violation_rate(std::span<const double> confidences,
                                std::span<const double> labels,
                                const ThresholdPolicy& policy, double alpha,
                                int B, std::uint64_t seed,
                                std::span<const double> evidence_coverage = {});

// ---------------------------------------------------------------------------
// Synthetic data with known ground truth
// ---------------------------------------------------------------------------

enum class ShiftKind { mean_shift, link_shift };

const char* to_string(ShiftKind kind);
ShiftKind shift_kind_from_string(const std::string& s);

struct SyntheticShift {
  ShiftKind kind = ShiftKind::mean_shift;
  double magnitude = 0.0;
};

/// Generator spec: feature-distribution parameters plus a monotone logistic
/// link from the assembled evidence vector to P(correct). Labels are drawn
/// from the link applied to the realized features, so the link is the exact
/// conditional model whatever the signal distributions look like.
struct SyntheticSpec {
  int n = 0;
  std::uint64_t seed = 0;

  FeatureConfig features;
  int k_samples = 3;

  // Latent skill and per-family signal parameters.
  double skill_mean = 0.0;
  double loglik_mean = -1.6;
  double loglik_skill = 0.5;
  double loglik_sd = 0.5;
  int tokens_min = 4;
  int tokens_max = 9;
  double entropy_mean = 1.0;
  double entropy_skill = -0.35;
  double entropy_sd = 0.3;
  double agree_gate = 1.3;
  double agree_bias = 0.8;
  double tool_mid = 0.55;
  double tool_skill = 0.18;
  double tool_noise = 0.12;
  double claim_support_mid = 0.6;
  double claim_support_skill = 0.25;
  int claims_min = 3;
  int claims_max = 6;

  // link: P(correct | z) = sigmoid(dot(weights, z) + bias).
  std::vector<double> link_weights;
  double link_bias = 0.0;

  // Optional test-time perturbation. mean_shift moves the entropy location
  // parameter (a covariate shift; the link is untouched); link_shift moves
  // the link bias (a conditional shift).
  std::optional<SyntheticShift> shift;

  void validate() const;
};

/// Draw n records. Each carries its true correctness probability in the
/// debug field for oracle checks; export strips it by default.
std::vector<RawSignalsRecord> generate_synthetic(const SyntheticSpec& spec);

}  // namespace unicr
