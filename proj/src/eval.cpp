// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unicr/error.hpp"
#include "unicr/rng.hpp"

namespace unicr {

// ---------------------------------------------------------------------------
// Risk-coverage curves
// ---------------------------------------------------------------------------

RCCurve rc_curve(std::span<const double> confidences, std::span<const double> labels) {
  const std::size_t n = confidences.size();
  if (labels.size() != n)
    throw Error(ErrorCode::data_error, "confidences and labels differ in length");
  if (n == 0) throw Error(ErrorCode::insufficient_data, "rc curve needs data");

  std::vector<double> losses(n);
  for (std::size_t i = 0; i < n; ++i) losses[i] = 1.0 - labels[i];

  std::vector<double> taus(confidences.begin(), confidences.end());
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

  RCCurve curve;
  // Ascending taus give strictly decreasing coverage, so the list comes out
  // ordered by decreasing coverage with the full-coverage point first.
  for (double tau : taus) {
    RiskCoverage rc = selective_risk_at(confidences, losses, tau);
    curve.points.push_back(RCPoint{tau, rc.coverage, rc.risk});
  }
  return curve;
}

double aurc(const RCCurve& curve) {
  if (curve.points.empty())
    throw Error(ErrorCode::insufficient_data, "aurc needs a non-empty curve");
  // Points arrive ordered by decreasing coverage; integrate ascending and
  // close the curve at coverage 0 with the full-coverage risk. With distinct
  // confidences this equals the mean of prefix error rates.
  std::vector<RCPoint> pts(curve.points.begin(), curve.points.end());
  std::sort(pts.begin(), pts.end(),
            [](const RCPoint& a, const RCPoint& b) { return a.coverage < b.coverage; });
  double full_risk = pts.back().risk;

  double area = 0.0;
  double prev_cov = 0.0;
  double prev_risk = full_risk;
  for (const auto& p : pts) {
    area += 0.5 * (prev_risk + p.risk) * (p.coverage - prev_cov);
    prev_cov = p.coverage;
    prev_risk = p.risk;
  }
  // Extend to coverage 1 if the curve stops short (it normally reaches 1).
  if (prev_cov < 1.0) area += prev_risk * (1.0 - prev_cov);
  return area;
}

double coverage_at_risk(const RCCurve& curve, double rho) {
  double best = 0.0;
  for (const auto& p : curve.points)
    if (p.risk <= rho) best = std::max(best, p.coverage);
  return best;
}

double bootstrap_violation_rate(std::span<const double> confidences,
                                std::span<const double> labels,
                                const ThresholdPolicy& policy, double alpha,
                                int B, std::uint64_t seed,
                                std::span<const double> evidence_coverage) {
  const std::size_t n = confidences.size();
  if (labels.size() != n)
    throw Error(ErrorCode::data_error, "confidences and labels differ in length");
  if (B < 100) throw Error(ErrorCode::config_error, "bootstrap needs B >= 100");
  if (n == 0) throw Error(ErrorCode::insufficient_data, "bootstrap needs data");
  const bool bucketed = policy.mode == PolicyMode::conformal_bucketed;
  if (bucketed && evidence_coverage.size() != n)
    throw Error(ErrorCode::data_error,
                "bucketed policy needs evidence coverage for every example");

  // Precompute per-example thresholds once; resampling reuses them.
  std::vector<double> tau(n);
  for (std::size_t i = 0; i < n; ++i)
    tau[i] = bucketed ? policy.tau_for(evidence_coverage[i]) : policy.global_tau;

  int violations = 0;
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, 0xb007 + static_cast<std::uint64_t>(b)));
    double loss_sum = 0.0;
    std::size_t answered = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = static_cast<std::size_t>(rng.below(n));
      if (confidences[j] < tau[j]) continue;
      ++answered;
      loss_sum += 1.0 - labels[j];
    }
    if (answered == 0) continue;  // zero coverage: flagged elsewhere, risk 0
    double risk = loss_sum / static_cast<double>(answered);
    if (risk > alpha) ++violations;
  }
  return static_cast<double>(violations) / static_cast<double>(B);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

const char* to_string(ShiftKind kind) {
  return kind == ShiftKind::mean_shift ? "mean_shift" : "link_shift";
}

ShiftKind shift_kind_from_string(const std::string& s) {
  if (s == "mean_shift") return ShiftKind::mean_shift;
  if (s == "link_shift") return ShiftKind::link_shift;
  throw Error(ErrorCode::config_error, "unknown shift kind \"" + s + "\"");
}

void SyntheticSpec::validate() const {
  if (n < 0) throw Error(ErrorCode::config_error, "synthetic n must be nonnegative");
  features.validate();
  if (k_samples < 1) throw Error(ErrorCode::config_error, "k_samples must be >= 1");
  if (tokens_min < 1 || tokens_max < tokens_min)
    throw Error(ErrorCode::config_error, "invalid token count range");
  if (claims_min < 1 || claims_max < claims_min)
    throw Error(ErrorCode::config_error, "invalid claim count range");
  std::size_t d = features.schema().size();
  if (link_weights.size() != d) {
    std::ostringstream os;
    os << "link_weights has " << link_weights.size() << " entries but the schema has " << d;
    throw Error(ErrorCode::config_error, os.str());
  }
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<RawSignalsRecord> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();

  double entropy_mean = spec.entropy_mean;
  double link_bias = spec.link_bias;
  if (spec.shift.has_value()) {
    if (spec.shift->kind == ShiftKind::mean_shift)
      entropy_mean += spec.shift->magnitude;
    else
      link_bias += spec.shift->magnitude;
  }

  const FeatureConfig& fc = spec.features;
  std::vector<RawSignalsRecord> records;
  records.reserve(spec.n);

  for (int i = 0; i < spec.n; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    RawSignalsRecord rec;
    rec.id = "syn-" + std::to_string(i);

    double skill = rng.normal(spec.skill_mean, 1.0);

    if (fc.seq) {
      int tokens = rng.uniform_int(spec.tokens_min, spec.tokens_max);
      std::vector<double> lp(tokens);
      for (double& v : lp)
        v = std::min(-1e-6, rng.normal(spec.loglik_mean + spec.loglik_skill * skill,
                                       spec.loglik_sd));
      rec.token_logprobs = std::move(lp);
    }
    if (fc.entropy) {
      int tokens = rng.uniform_int(spec.tokens_min, spec.tokens_max);
      std::vector<double> te(tokens);
      for (double& v : te)
        v = std::fabs(rng.normal(entropy_mean + spec.entropy_skill * skill,
                                 spec.entropy_sd));
      rec.token_entropies = std::move(te);
    }
    if (fc.sc || fc.entailment || fc.verifier) {
      double p_major = sigmoid(spec.agree_gate * skill + spec.agree_bias);
      rec.samples.resize(spec.k_samples);
      for (int k = 0; k < spec.k_samples; ++k) {
        SampleRecord& s = rec.samples[k];
        if (k == 0 || rng.bernoulli(p_major))
          s.answer_key = "a";
        else
          s.answer_key = rng.bernoulli(0.5) ? "b" : "c";
        if (fc.verifier)
          s.verifier_pass = rng.bernoulli(clamp01(0.15 + 0.7 * p_major));
      }
      if (fc.entailment) {
        // Symmetric pairwise entailment keyed off answer agreement.
        std::vector<std::vector<double>> ent(spec.k_samples,
                                             std::vector<double>(spec.k_samples, 1.0));
        for (int a = 0; a < spec.k_samples; ++a)
          for (int b = a + 1; b < spec.k_samples; ++b) {
            double base =
                rec.samples[a].answer_key == rec.samples[b].answer_key ? 0.85 : 0.25;
            double v = clamp01(base + rng.normal(0.0, 0.05));
            ent[a][b] = ent[b][a] = v;
          }
        for (int a = 0; a < spec.k_samples; ++a)
          rec.samples[a].entailment_pairs = ent[a];
      }
    }
    if (fc.rag) {
      int n_claims = rng.uniform_int(spec.claims_min, spec.claims_max);
      rec.claims.resize(n_claims);
      for (auto& c : rec.claims) {
        c.salient = rng.bernoulli(0.85);
        double support = clamp01(spec.claim_support_mid +
                                 spec.claim_support_skill * skill + rng.normal(0.0, 0.15));
        c.max_passage_entailment = support;
        c.entailment = clamp01(support + rng.normal(0.0, 0.08));
        c.contradiction_score = clamp01(0.35 - 0.25 * skill + rng.normal(0.0, 0.12));
        c.contradicted = c.contradiction_score > 0.75;
      }
      // Guarantee at least one salient claim so rag features stay informative.
      rec.claims[0].salient = true;
    }
    if (fc.tool) {
      rec.tool_diag =
          clamp01(spec.tool_mid + spec.tool_skill * skill + rng.normal(0.0, spec.tool_noise));
    }

    AssembledFeatures feats = assemble_features(rec, fc);
    double logit = link_bias;
    for (std::size_t j = 0; j < feats.vec.values.size(); ++j)
      logit += spec.link_weights[j] * feats.vec.values[j];
    double p = sigmoid(logit);
    rec.debug_true_p = p;
    rec.label = CorrectnessLabel{LabelKind::exact, rng.bernoulli(p) ? 1.0 : 0.0};
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace unicr
