// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unicr/error.hpp"

namespace unicr {

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::data_error, "confidences and labels differ in length");
}

constexpr double kLogEps = 1e-12;

}  // namespace

std::vector<double> label_values(const std::vector<CorrectnessLabel>& labels) {
  std::vector<double> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0 && labels[i].kind != labels[0].kind)
      throw Error(ErrorCode::data_error, "labels are not homogeneous in kind");
    const auto& l = labels[i];
    if (!std::isfinite(l.value) || l.value < 0.0 || l.value > 1.0)
      throw Error(ErrorCode::data_error, "label value outside [0,1]");
    if (l.is_binary() && l.value != 0.0 && l.value != 1.0)
      throw Error(ErrorCode::data_error, "binary label value must be 0 or 1");
    out.push_back(l.value);
  }
  return out;
}

double ece(std::span<const double> confidences, std::span<const double> labels,
           EceScheme scheme) {
  check_lengths(confidences, labels);
  const std::size_t n = confidences.size();
  if (n == 0) throw Error(ErrorCode::insufficient_data, "ece needs at least one example");

  // Bin assignment. fixed15: equal-width bins. adaptive15: quantile edges,
  // assigned by value so tied confidences land in one bin.
  std::vector<int> bin(n, 0);
  if (scheme == EceScheme::fixed15) {
    for (std::size_t i = 0; i < n; ++i) {
      int b = static_cast<int>(confidences[i] * kEceBins);
      bin[i] = std::clamp(b, 0, kEceBins - 1);
    }
  } else {
    std::vector<double> sorted(confidences.begin(), confidences.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (int k = 1; k < kEceBins; ++k) {
      std::size_t idx = (k * n) / kEceBins;
      if (idx >= n) idx = n - 1;
      edges.push_back(sorted[idx]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      int b = 0;
      for (double e : edges)
        if (e < confidences[i]) ++b;
      bin[i] = b;
    }
  }

  std::vector<double> conf_sum(kEceBins, 0.0), label_sum(kEceBins, 0.0);
  std::vector<std::size_t> count(kEceBins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    conf_sum[bin[i]] += confidences[i];
    label_sum[bin[i]] += labels[i];
    ++count[bin[i]];
  }
  double total = 0.0;
  for (int b = 0; b < kEceBins; ++b) {
    if (count[b] == 0) continue;
    double w = static_cast<double>(count[b]) / static_cast<double>(n);
    double gap = conf_sum[b] / count[b] - label_sum[b] / count[b];
    total += w * std::fabs(gap);
  }
  return total;
}

double brier(std::span<const double> confidences, std::span<const double> labels) {
  check_lengths(confidences, labels);
  if (confidences.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    double d = confidences[i] - labels[i];
    sum += d * d;
  }
  return sum / static_cast<double>(confidences.size());
}

double nll(std::span<const double> confidences, std::span<const double> labels) {
  check_lengths(confidences, labels);
  if (confidences.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    double c = std::clamp(confidences[i], kLogEps, 1.0 - kLogEps);
    sum -= labels[i] * std::log(c) + (1.0 - labels[i]) * std::log(1.0 - c);
  }
  return sum / static_cast<double>(confidences.size());
}

double selective_loss(std::span<const double> confidences,
                      std::span<const double> labels, double tau, double kappa,
                      double beta) {
  check_lengths(confidences, labels);
  const std::size_t n = confidences.size();
  if (n == 0) return 0.0;
  std::size_t answered = 0;
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (confidences[i] >= tau) {
      ++answered;
      err += 1.0 - labels[i];
    }
  }
  double cov = static_cast<double>(answered) / static_cast<double>(n);
  return err / static_cast<double>(n) + beta * std::max(0.0, kappa - cov);
}

double coverage_smoothing_penalty(std::span<const double> confidences,
                                  double tau, double delta) {
  if (delta <= 0.0) throw Error(ErrorCode::config_error, "delta must be positive");
  if (confidences.empty()) return 0.0;
  std::size_t in_window = 0;
  for (double c : confidences)
    if (c >= tau - delta && c <= tau + delta) ++in_window;
  double frac = static_cast<double>(in_window) / static_cast<double>(confidences.size());
  double density = frac / (2.0 * delta);
  // Huber with knee delta.
  double a = std::fabs(density);
  if (a <= delta) return 0.5 * a * a;
  return delta * (a - 0.5 * delta);
}

std::vector<ReliabilityBin> reliability_data(std::span<const double> confidences,
                                             std::span<const double> labels,
                                             int bins) {
  check_lengths(confidences, labels);
  if (bins < 1) throw Error(ErrorCode::config_error, "bins must be >= 1");
  std::vector<double> conf_sum(bins, 0.0), label_sum(bins, 0.0);
  std::vector<long long> count(bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    int b = std::clamp(static_cast<int>(confidences[i] * bins), 0, bins - 1);
    conf_sum[b] += confidences[i];
    label_sum[b] += labels[i];
    ++count[b];
  }
  std::vector<ReliabilityBin> out;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;  // empty bins skipped
    out.push_back(ReliabilityBin{conf_sum[b] / count[b], label_sum[b] / count[b], count[b]});
  }
  return out;
}

CalibrationMetricsReport calibration_metrics(std::span<const double> confidences,
                                             std::span<const double> labels) {
  CalibrationMetricsReport report;
  report.nll = nll(confidences, labels);
  report.brier = brier(confidences, labels);
  report.ece_fixed = ece(confidences, labels, EceScheme::fixed15);
  report.ece_adaptive = ece(confidences, labels, EceScheme::adaptive15);
  report.reliability_bins = reliability_data(confidences, labels, kEceBins);
  return report;
}

}  // namespace unicr
