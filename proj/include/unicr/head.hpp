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

// ---------------------------------------------------------------------------
// Isotonic post-map
// ---------------------------------------------------------------------------

/// Monotone piecewise-linear calibration map fitted by pool-adjacent-
/// violators. Evaluation interpolates between breakpoints and clamps at the
/// ends.
struct IsotonicMap {
  // (input, output) pairs with strictly increasing inputs and
  // non-decreasing outputs.
  std::vector<std::pair<double, double>> breakpoints;

  double operator()(double c) const;
  bool valid() const;
};

/// PAV fit of labels against confidences. The mapped confidences never have
/// a larger mean squared error than the raw ones on the fit split.
IsotonicMap fit_isotonic(std::span<const double> confidences,
                         std::span<const double> labels);

// ---------------------------------------------------------------------------
// Calibration head
// ---------------------------------------------------------------------------

enum class HeadKind { logistic, mlp2 };

const char* to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& s);

/// Small trainable head mapping z(x) to a correctness logit. Temperature
/// divides the designated logit-derived features before the head sees them.
///
/// Weight layout:
///   logistic: [w_0..w_{d-1}, bias]
///   mlp2:     [W1 row-major (hidden x d), b1 (hidden), w2 (hidden), b2]
struct HeadModel {
  HeadKind kind = HeadKind::logistic;
  int d = 0;
  int hidden = 0;  // mlp2 only
  std::vector<double> weights;
  double temperature = 1.0;
  std::vector<int> temp_indices;  // schema indices divided by temperature
  double l2_lambda = 1e-4;
  std::int64_t seed = 0;
  std::string schema_hash;

  std::size_t expected_weight_count() const;
  void validate() const;
};

struct HeadFitConfig {
  HeadKind kind = HeadKind::logistic;
  int hidden = 16;
  double alpha = 0.1;      // soft-ECE weight in the training objective
  double l2_lambda = 1e-4;
  std::int64_t seed = 42;
  int max_iters = 2000;
  double grad_tol = 1e-7;
  bool temperature_enabled = true;
  std::vector<int> temp_indices;

  // Optional selective term (soft indicator around the working threshold).
  bool selective_enabled = false;
  double beta = 1.0;
  double kappa = 0.8;
  double rho = 0.05;  // working threshold is 1 - rho
  double selective_soft_width = 0.05;

  // Optional coverage smoothing penalty around the working threshold.
  bool coverage_smoothing_enabled = false;
  double smoothing_delta = 0.05;
  double smoothing_weight = 0.1;

  // Early stopping on hard adaptive ECE over a validation slice.
  bool early_stopping = true;
  int eval_interval = 10;
  int patience_evals = 25;
  int min_iters = 100;
};

struct FitDiagnostics {
  // Objective value at start plus after every accepted step (strictly
  // decreasing by construction of the backtracking line search).
  std::vector<double> loss_trajectory;
  int iterations = 0;
  double holdout_adaptive_ece = 0.0;
};

/// Fit the head by full-batch gradient descent with backtracking, minimizing
/// mean cross-entropy plus alpha times a soft-binned ECE surrogate (plus L2
/// on the weights). Temperature is optimized jointly through the rescaled
/// features. Deterministic given the seed.
///
/// When validation data is supplied, it drives early stopping on hard
/// adaptive ECE; otherwise a seeded internal holdout is used (when the data
/// is large enough for one).
HeadModel fit_head(const std::vector<FeatureVector>& features,
                   const std::vector<CorrectnessLabel>& labels,
                   const HeadFitConfig& config,
                   const std::vector<FeatureVector>* val_features = nullptr,
                   const std::vector<CorrectnessLabel>* val_labels = nullptr,
                   FitDiagnostics* diagnostics = nullptr);

/// Calibrated confidence for one evidence vector: sigmoid of the head output
/// with temperature-scaled features, passed through the isotonic map when
/// present, clamped to [1e-6, 1-1e-6].
double predict_confidence(const HeadModel& model, const IsotonicMap* iso,
                          const FeatureVector& z);

/// Same, on raw values already known to match the model's schema.
double predict_confidence_values(const HeadModel& model, const IsotonicMap* iso,
                                 std::span<const double> values);

// ---------------------------------------------------------------------------
// Training objective internals (exposed for verification)
// ---------------------------------------------------------------------------

/// Differentiable soft-binned ECE: triangular kernel weights over 15 bin
/// centers. Reported metrics always use the hard-binned ece() instead.
double soft_ece(std::span<const double> confidences, std::span<const double> labels);

/// Value of the head training objective at the given parameter vector
/// (weights, then temperature when enabled). Used by the gradient checks.
double head_objective(const HeadFitConfig& config,
                      const std::vector<FeatureVector>& features,
                      std::span<const double> labels,
                      std::span<const double> params);

/// Analytic gradient of head_objective with respect to params.
std::vector<double> head_objective_gradient(const HeadFitConfig& config,
                                            const std::vector<FeatureVector>& features,
                                            std::span<const double> labels,
                                            std::span<const double> params);

/// Number of optimizable parameters for a fit with this config over
/// d-dimensional features.
std::size_t head_param_count(const HeadFitConfig& config, int d);

}  // namespace unicr
