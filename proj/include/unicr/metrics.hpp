// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <span>
#include <vector>

#include "unicr/types.hpp"

namespace unicr {

enum class EceScheme { fixed15, adaptive15 };

inline constexpr int kEceBins = 15;

/// Expected calibration error. fixed15 uses 15 equal-width bins on [0,1];
/// adaptive15 uses quantile edges so bins are (approximately) equal-mass,
/// with tied confidences kept in one bin. Empty bins are skipped.
double ece(std::span<const double> confidences, std::span<const double> labels,
           EceScheme scheme);

/// Mean squared error between confidence and (possibly graded) correctness.
double brier(std::span<const double> confidences, std::span<const double> labels);

/// Mean negative log-likelihood of the (possibly graded) labels.
double nll(std::span<const double> confidences, std::span<const double> labels);

/// Selective training loss: high-confidence error indicator plus a hinge on
/// the coverage shortfall below kappa, weighted by beta.
double selective_loss(std::span<const double> confidences,
                      std::span<const double> labels, double tau, double kappa,
                      double beta);

/// Huber penalty on the local density of confidences within [tau-delta,
/// tau+delta] (window fraction over 2*delta). Discourages cliff-like
/// confidence pileups around the working threshold.
double coverage_smoothing_penalty(std::span<const double> confidences,
                                  double tau, double delta);

struct ReliabilityBin {
  double mean_conf = 0.0;
  double frac_correct = 0.0;
  long long count = 0;
};

/// Equal-width bin aggregation for reliability diagrams; empty bins skipped.
std::vector<ReliabilityBin> reliability_data(std::span<const double> confidences,
                                             std::span<const double> labels,
                                             int bins);

struct CalibrationMetricsReport {
  double nll = 0.0;
  double brier = 0.0;
  double ece_fixed = 0.0;
  double ece_adaptive = 0.0;
  std::vector<ReliabilityBin> reliability_bins;
};

CalibrationMetricsReport calibration_metrics(std::span<const double> confidences,
                                             std::span<const double> labels);

/// Labels as plain correctness values, validating homogeneous kind.
std::vector<double> label_values(const std::vector<CorrectnessLabel>& labels);

}  // namespace unicr
