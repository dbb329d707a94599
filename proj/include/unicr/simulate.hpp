// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "unicr/eval.hpp"
#include "unicr/head.hpp"

namespace unicr {

/// Monte Carlo check of the risk-control guarantee: a head is fitted once on
/// an unshifted training draw (learn-then-test), then every trial draws
/// disjoint calibration and test sets — both shifted when a shift is
/// configured, so the pair stays exchangeable — selects the conformal
/// threshold on the calibration set and measures selective risk on the test
/// set.
struct SimulateSpec {
  int trials = 1000;
  int calib_size = 500;
  int test_size = 500;
  int train_size = 4000;
  double alpha = 0.05;
  std::uint64_t seed = 20260810;
  QuantileSmoothing smoothing = QuantileSmoothing::none;
  SyntheticSpec synthetic;
  HeadFitConfig head;
  // Optional comparison: a validation threshold fit once on pre-shift data,
  // replayed per trial on the (possibly shifted) test set. Reported only.
  std::optional<double> compare_validation_rho;

  void validate() const;
};

struct ValidityReport {
  int trials = 0;
  double alpha = 0.0;
  double violation_rate = 0.0;
  double mean_risk = 0.0;
  double mean_coverage = 0.0;
  double risk_p50 = 0.0;
  double risk_p90 = 0.0;
  double risk_max = 0.0;
  int zero_coverage_trials = 0;
  // Exchangeability diagnostics.
  double answered_error_fraction_mean = 0.0;  // P(answered | error) on test
  double base_error_rate_mean = 0.0;
  // Optional pre-shift validation comparison (reported, not asserted).
  bool has_validation = false;
  double validation_tau = 0.0;
  double validation_violation_rate = 0.0;
  double validation_mean_risk = 0.0;
  double validation_mean_coverage = 0.0;

  bool shifted = false;
  std::string shift_kind;
  double shift_magnitude = 0.0;
  double elapsed_seconds = 0.0;
  std::uint64_t seed = 0;
};

ValidityReport run_validity_experiment(const SimulateSpec& spec);

/// A spec exercising the guarantee in a regime where the threshold rule is
/// informative and selective risk stays inside the budget; used by the
/// default simulate command and the acceptance suite.
SimulateSpec default_simulate_spec();

}  // namespace unicr
