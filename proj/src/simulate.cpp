// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/simulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "unicr/error.hpp"
#include "unicr/metrics.hpp"
#include "unicr/rng.hpp"

namespace unicr {

void SimulateSpec::validate() const {
  if (trials < 1) throw Error(ErrorCode::config_error, "trials must be >= 1");
  if (calib_size < 2 || test_size < 1 || train_size < 20)
    throw Error(ErrorCode::config_error, "simulate sizes too small");
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw Error(ErrorCode::config_error, "alpha must lie in (0,1)");
  SyntheticSpec probe = synthetic;
  probe.n = 1;
  probe.validate();
  if (compare_validation_rho.has_value() &&
      (*compare_validation_rho < 0.0 || *compare_validation_rho > 1.0))
    throw Error(ErrorCode::config_error, "validation rho must lie in [0,1]");
}

namespace {

struct Batch {
  std::vector<double> confidences;
  std::vector<double> labels;
};

Batch draw_batch(const SyntheticSpec& proto, int n, std::uint64_t seed,
                 const HeadModel& head) {
  SyntheticSpec spec = proto;
  spec.n = n;
  spec.seed = seed;
  std::vector<RawSignalsRecord> records = generate_synthetic(spec);
  Batch out;
  out.confidences.reserve(records.size());
  out.labels.reserve(records.size());
  for (const auto& r : records) {
    AssembledFeatures f = assemble_features(r, spec.features);
    out.confidences.push_back(predict_confidence_values(head, nullptr, f.vec.values));
    out.labels.push_back(r.label->value);
  }
  return out;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(v.size() - 1, lo + 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace

ValidityReport run_validity_experiment(const SimulateSpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();

  // Learn-then-test: fit the head once on an unshifted training draw, then
  // keep it frozen through every trial.
  SyntheticSpec train_spec = spec.synthetic;
  train_spec.shift.reset();
  train_spec.n = spec.train_size;
  train_spec.seed = derive_seed(spec.seed, 1);
  std::vector<RawSignalsRecord> train_records = generate_synthetic(train_spec);

  std::vector<FeatureVector> feats;
  std::vector<CorrectnessLabel> labels;
  feats.reserve(train_records.size());
  labels.reserve(train_records.size());
  for (const auto& r : train_records) {
    feats.push_back(assemble_features(r, train_spec.features).vec);
    labels.push_back(*r.label);
  }
  HeadFitConfig head_config = spec.head;
  head_config.temp_indices = temperature_feature_indices(train_spec.features);
  HeadModel head = fit_head(feats, labels, head_config);

  // Optional comparison: validation threshold fitted once, pre-shift.
  ValidityReport report;
  if (spec.compare_validation_rho.has_value()) {
    Batch pre = draw_batch(train_spec, spec.calib_size, derive_seed(spec.seed, 2), head);
    report.has_validation = true;
    report.validation_tau =
        validation_threshold(pre.confidences, pre.labels, *spec.compare_validation_rho);
  }

  const SyntheticSpec& live = spec.synthetic;  // shifted when configured
  int violations = 0, val_violations = 0, zero_cov = 0;
  std::vector<double> risks;
  risks.reserve(spec.trials);
  double risk_sum = 0.0, cov_sum = 0.0, aef_sum = 0.0, base_err_sum = 0.0;
  double val_risk_sum = 0.0, val_cov_sum = 0.0;
  int aef_trials = 0;

  for (int t = 0; t < spec.trials; ++t) {
    std::uint64_t base = 1000 + 2 * static_cast<std::uint64_t>(t);
    Batch calib = draw_batch(live, spec.calib_size, derive_seed(spec.seed, base), head);
    Batch test = draw_batch(live, spec.test_size, derive_seed(spec.seed, base + 1), head);

    ConformalResult conf =
        conformal_threshold(calib.confidences, calib.labels, spec.alpha, spec.smoothing);

    std::vector<double> losses(test.labels.size());
    for (std::size_t i = 0; i < test.labels.size(); ++i) losses[i] = 1.0 - test.labels[i];
    RiskCoverage rc = selective_risk_at(test.confidences, losses, conf.tau);
    if (rc.zero_coverage) ++zero_cov;
    if (!rc.zero_coverage && rc.risk > spec.alpha) ++violations;
    risk_sum += rc.risk;
    cov_sum += rc.coverage;
    risks.push_back(rc.risk);

    // Diagnostics: error base rate and the answered fraction among errors.
    std::size_t errors = 0, answered_errors = 0;
    for (std::size_t i = 0; i < test.labels.size(); ++i) {
      if (test.labels[i] == 0.0) {
        ++errors;
        if (test.confidences[i] >= conf.tau) ++answered_errors;
      }
    }
    base_err_sum += static_cast<double>(errors) / static_cast<double>(test.labels.size());
    if (errors > 0) {
      aef_sum += static_cast<double>(answered_errors) / static_cast<double>(errors);
      ++aef_trials;
    }

    if (report.has_validation) {
      RiskCoverage vrc = selective_risk_at(test.confidences, losses, report.validation_tau);
      if (!vrc.zero_coverage && vrc.risk > spec.alpha) ++val_violations;
      val_risk_sum += vrc.risk;
      val_cov_sum += vrc.coverage;
    }
  }

  report.trials = spec.trials;
  report.alpha = spec.alpha;
  report.violation_rate = static_cast<double>(violations) / spec.trials;
  report.mean_risk = risk_sum / spec.trials;
  report.mean_coverage = cov_sum / spec.trials;
  report.risk_p50 = percentile(risks, 0.50);
  report.risk_p90 = percentile(risks, 0.90);
  report.risk_max = risks.empty() ? 0.0 : *std::max_element(risks.begin(), risks.end());
  report.zero_coverage_trials = zero_cov;
  report.answered_error_fraction_mean = aef_trials ? aef_sum / aef_trials : 0.0;
  report.base_error_rate_mean = base_err_sum / spec.trials;
  if (report.has_validation) {
    report.validation_violation_rate = static_cast<double>(val_violations) / spec.trials;
    report.validation_mean_risk = val_risk_sum / spec.trials;
    report.validation_mean_coverage = val_cov_sum / spec.trials;
  }
  report.shifted = spec.synthetic.shift.has_value();
  if (report.shifted) {
    report.shift_kind = to_string(spec.synthetic.shift->kind);
    report.shift_magnitude = spec.synthetic.shift->magnitude;
  }
  report.seed = spec.seed;
  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

SimulateSpec default_simulate_spec() {
  SimulateSpec spec;
  spec.trials = 1000;
  spec.calib_size = 500;
  spec.test_size = 500;
  spec.train_size = 4000;
  spec.alpha = 0.05;
  spec.seed = 20260810;

  SyntheticSpec& syn = spec.synthetic;
  syn.features.seq = true;
  syn.features.entropy = true;
  syn.features.sc = false;
  syn.features.entailment = false;
  syn.features.rag = false;
  syn.features.verifier = false;
  syn.features.tool = true;
  syn.features.reference_pool = {-3.2, -2.8, -2.4, -2.1, -1.8, -1.6,
                                 -1.4, -1.2, -1.0, -0.8, -0.6, -0.4};
  // Schema order: seq_loglik, seq_rank, seq_entropy, tool_diag.
  syn.link_weights = {1.2, 1.0, -0.8, 1.5};
  syn.link_bias = 5.5;

  spec.head.kind = HeadKind::logistic;
  spec.compare_validation_rho = spec.alpha;
  return spec;
}

}  // namespace unicr
