// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <numeric>
#include <sstream>

#include "unicr/error.hpp"
#include "unicr/io.hpp"
#include "unicr/metrics.hpp"

namespace unicr {

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), name);
  }
}

std::string created_timestamp() {
  // Reproducible-build convention: honor SOURCE_DATE_EPOCH so identical
  // configs produce byte-identical artifacts.
  std::time_t t = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    long long v = std::strtoll(env, &end, 10);
    if (end != env && v >= 0) t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and artifact validation
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  features.validate();
  if (head.kind == HeadKind::mlp2 && head.hidden < 1)
    throw Error(ErrorCode::config_error, "mlp2 head needs a positive hidden width");
  if (head.alpha < 0.0 || head.l2_lambda < 0.0)
    throw Error(ErrorCode::config_error, "head alpha and l2_lambda must be nonnegative");
  if (policy.mode == PolicyMode::validation) {
    if (policy.alpha_or_rho < 0.0 || policy.alpha_or_rho > 1.0)
      throw Error(ErrorCode::config_error, "rho must lie in [0,1]");
  } else if (!(policy.alpha_or_rho > 0.0) || !(policy.alpha_or_rho < 1.0)) {
    throw Error(ErrorCode::config_error, "alpha must lie in (0,1)");
  }
  if (policy.mode == PolicyMode::conformal_bucketed && !features.rag)
    throw Error(ErrorCode::config_error,
                "bucketed policies bucket on evidence coverage; enable the rag family");
  if (policy.min_bucket_size < 1)
    throw Error(ErrorCode::config_error, "min_bucket_size must be >= 1");
  double sum = split.train + split.tune + split.calibrate;
  if (std::fabs(sum - 1.0) > 1e-9)
    throw Error(ErrorCode::config_error, "split fractions must sum to 1");
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(decision.retry_margin) || !in01(decision.retry_coverage_threshold) ||
      !in01(decision.reason_coverage_threshold) ||
      !in01(decision.reason_dispersion_threshold) ||
      !in01(decision.reason_tool_threshold) || !in01(decision.reason_verifier_threshold))
    throw Error(ErrorCode::config_error, "decision thresholds must lie in [0,1]");
}

void CalibrationArtifact::validate() const {
  if (version != kArtifactVersion)
    throw Error(ErrorCode::version_mismatch,
                "artifact version \"" + version + "\" is not " + kArtifactVersion);
  feature_config.validate();
  head.validate();
  const auto schema = feature_config.schema();
  if (static_cast<int>(schema.size()) != head.d)
    throw Error(ErrorCode::hash_mismatch, "schema size does not match head dimensionality");
  if (head.schema_hash != feature_config.schema_hash())
    throw Error(ErrorCode::hash_mismatch, "schema hash does not match the feature config");
  policy.validate();
  if (policy.mode == PolicyMode::conformal_bucketed && !feature_config.rag)
    throw Error(ErrorCode::config_error, "bucketed policy without the rag family");
  if (isotonic.has_value() && !isotonic->valid())
    throw Error(ErrorCode::data_error, "invalid isotonic map in artifact");
  if (feature_stats.mean.size() != schema.size() ||
      feature_stats.stddev.size() != schema.size())
    throw Error(ErrorCode::data_error, "feature stats do not match the schema");
}

// ---------------------------------------------------------------------------
// Training (evidence calibration and threshold selection)
// ---------------------------------------------------------------------------

CalibrationArtifact train(const std::vector<RawSignalsRecord>& records,
                          const RunConfig& config) {
  stage("config", [&] { config.validate(); });
  if (records.empty())
    throw Error(ErrorCode::insufficient_data, "no training records", "data");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label.has_value())
      throw Error(ErrorCode::data_error,
                  "record " + std::to_string(i) + " (id=" + records[i].id + ") has no label",
                  "data");
    if (records[i].label->kind != records[0].label->kind)
      throw Error(ErrorCode::data_error,
                  "labels must be homogeneous in kind; record " + std::to_string(i) +
                      " differs from the first",
                  "data");
  }

  SplitIndices split = stage("split", [&] {
    return ltt_split(records.size(), config.split.train, config.split.tune,
                     config.split.calibrate, config.seed);
  });

  std::vector<AssembledFeatures> assembled = stage("assemble", [&] {
    std::vector<AssembledFeatures> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(assemble_features(r, config.features));
    return out;
  });

  auto gather_feats = [&](const std::vector<std::size_t>& idx) {
    std::vector<FeatureVector> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(assembled[i].vec);
    return out;
  };
  auto gather_labels = [&](const std::vector<std::size_t>& idx) {
    std::vector<CorrectnessLabel> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(*records[i].label);
    return out;
  };

  std::vector<FeatureVector> train_feats = gather_feats(split.train);
  std::vector<CorrectnessLabel> train_labels = gather_labels(split.train);
  std::vector<FeatureVector> tune_feats = gather_feats(split.tune);
  std::vector<CorrectnessLabel> tune_labels = gather_labels(split.tune);
  std::vector<FeatureVector> cal_feats = gather_feats(split.calibrate);
  std::vector<CorrectnessLabel> cal_labels = gather_labels(split.calibrate);

  HeadFitConfig head_config = config.head;
  head_config.temp_indices = temperature_feature_indices(config.features);
  // The working threshold for the optional selective and smoothing terms is
  // 1 - rho for the configured risk budget.
  head_config.rho = config.policy.alpha_or_rho;

  HeadModel head = stage("fit_head", [&] {
    return fit_head(train_feats, train_labels, head_config, &tune_feats, &tune_labels);
  });

  // Isotonic post-map on the tune split; mandatory for mlp2 heads.
  bool want_iso = config.isotonic_explicit ? config.isotonic
                                           : (config.head.kind == HeadKind::mlp2);
  std::optional<IsotonicMap> iso;
  if (want_iso) {
    iso = stage("isotonic", [&] {
      std::vector<double> conf(tune_feats.size());
      for (std::size_t i = 0; i < tune_feats.size(); ++i)
        conf[i] = predict_confidence_values(head, nullptr, tune_feats[i].values);
      return fit_isotonic(conf, label_values(tune_labels));
    });
  }

  // Calibration-split confidences (post isotonic) drive threshold selection.
  std::vector<double> cal_conf(cal_feats.size());
  const IsotonicMap* iso_ptr = iso.has_value() ? &*iso : nullptr;
  for (std::size_t i = 0; i < cal_feats.size(); ++i)
    cal_conf[i] = predict_confidence_values(head, iso_ptr, cal_feats[i].values);
  std::vector<double> cal_values = label_values(cal_labels);

  int rag_idx = schema_index(config.features, FeatureId::rag_coverage);
  std::vector<double> cal_cov;
  if (rag_idx >= 0) {
    cal_cov.resize(cal_feats.size());
    for (std::size_t i = 0; i < cal_feats.size(); ++i)
      cal_cov[i] = cal_feats[i].values[rag_idx];
  }

  ThresholdPolicy policy = stage("threshold", [&]() -> ThresholdPolicy {
    ThresholdPolicy p;
    p.mode = config.policy.mode;
    p.alpha_or_rho = config.policy.alpha_or_rho;
    p.calibration_size = static_cast<int>(cal_conf.size());
    p.smoothing = config.policy.smoothing;
    const bool binary = !cal_labels.empty() && cal_labels[0].kind != LabelKind::graded;
    switch (config.policy.mode) {
      case PolicyMode::validation:
        p.global_tau = validation_threshold(cal_conf, cal_values, config.policy.alpha_or_rho);
        break;
      case PolicyMode::conformal:
        if (binary) {
          ConformalResult r = conformal_threshold(cal_conf, cal_values,
                                                  config.policy.alpha_or_rho, p.smoothing);
          p.global_tau = r.tau;
          p.no_errors_observed = r.no_errors_observed;
        } else {
          // Graded labels: soft risk control over the bounded surrogate.
          p.global_tau = soft_conformal_threshold(
              cal_conf, cal_values, bayes_threshold(config.policy.alpha_or_rho),
              config.policy.alpha_or_rho);
        }
        break;
      case PolicyMode::conformal_bucketed: {
        if (!binary)
          throw Error(ErrorCode::config_error,
                      "bucketed conformal control supports binary labels only");
        p = bucketed_conformal(cal_conf, cal_values, cal_cov, config.policy.alpha_or_rho,
                               config.policy.bucket_edges, config.policy.smoothing,
                               config.policy.min_bucket_size);
        break;
      }
    }
    return p;
  });

  // Standardization constants over the answered population (fallback: the
  // whole calibration split) back the reason-tag fallback at inference.
  const std::size_t d = cal_feats.empty() ? 0 : cal_feats[0].values.size();
  FeatureStats stats;
  stats.mean.assign(d, 0.0);
  stats.stddev.assign(d, 1.0);
  {
    std::vector<std::size_t> answered;
    for (std::size_t i = 0; i < cal_conf.size(); ++i) {
      std::optional<double> cov;
      if (rag_idx >= 0) cov = cal_cov[i];
      if (cal_conf[i] >= policy.tau_for(cov)) answered.push_back(i);
    }
    if (answered.empty()) {
      answered.resize(cal_conf.size());
      std::iota(answered.begin(), answered.end(), 0);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double sum = 0.0;
      for (std::size_t i : answered) sum += cal_feats[i].values[j];
      double mean = sum / static_cast<double>(answered.size());
      double ss = 0.0;
      for (std::size_t i : answered) {
        double dlt = cal_feats[i].values[j] - mean;
        ss += dlt * dlt;
      }
      stats.mean[j] = mean;
      double sd = std::sqrt(ss / static_cast<double>(answered.size()));
      stats.stddev[j] = sd > 1e-9 ? sd : 1.0;
    }
  }

  CalibrationArtifact artifact;
  artifact.head = std::move(head);
  artifact.isotonic = std::move(iso);
  artifact.policy = std::move(policy);
  artifact.feature_config = config.features;
  artifact.decision = config.decision;
  artifact.feature_stats = std::move(stats);
  artifact.provenance.seed = config.seed;
  artifact.provenance.split = config.split;
  artifact.provenance.alpha_or_rho = config.policy.alpha_or_rho;
  artifact.provenance.mode = config.policy.mode;
  artifact.provenance.config_hash = io::config_hash(io::run_config_to_json(config));
  artifact.provenance.created = created_timestamp();
  artifact.validate();
  return artifact;
}

// ---------------------------------------------------------------------------
// Reason tags and refusal text
// ---------------------------------------------------------------------------

const char* to_string(Reason reason) {
  switch (reason) {
    case Reason::low_evidence_coverage: return "low_evidence_coverage";
    case Reason::high_semantic_dispersion: return "high_semantic_dispersion";
    case Reason::tool_failure: return "tool_failure";
    case Reason::verifier_rejection: return "verifier_rejection";
  }
  return "?";
}

Reason reason_from_string(const std::string& s) {
  if (s == "low_evidence_coverage") return Reason::low_evidence_coverage;
  if (s == "high_semantic_dispersion") return Reason::high_semantic_dispersion;
  if (s == "tool_failure") return Reason::tool_failure;
  if (s == "verifier_rejection") return Reason::verifier_rejection;
  throw Error(ErrorCode::data_error, "unknown reason \"" + s + "\"");
}

const char* to_string(PlanChange change) {
  switch (change) {
    case PlanChange::none: return "none";
    case PlanChange::increase_K: return "increase_K";
    case PlanChange::refresh_retrieval: return "refresh_retrieval";
  }
  return "?";
}

namespace {

std::optional<double> feature_value(const FeatureConfig& config, const FeatureVector& z,
                                    FeatureId id) {
  int idx = schema_index(config, id);
  if (idx < 0) return std::nullopt;
  return z.values[idx];
}

Reason fallback_reason(const std::string& feature) {
  if (feature.rfind("rag_", 0) == 0) return Reason::low_evidence_coverage;
  if (feature == "verifier_consistency" || feature == "tool_diag")
    return Reason::tool_failure;
  return Reason::high_semantic_dispersion;
}

}  // namespace

Reason reason_tag(const CalibrationArtifact& artifact, const FeatureVector& z,
                  bool degenerate_evidence,
                  const std::optional<std::vector<VerifierFlag>>& verifier_flags) {
  const FeatureConfig& fc = artifact.feature_config;
  const DecisionConfig& dc = artifact.decision;

  // 1. Tool/verifier machinery failing outright.
  auto tool = feature_value(fc, z, FeatureId::tool_diag);
  if (tool.has_value() && *tool < dc.reason_tool_threshold) return Reason::tool_failure;
  auto consis = feature_value(fc, z, FeatureId::verifier_consistency);
  if (consis.has_value() && *consis < dc.reason_tool_threshold) return Reason::tool_failure;

  // 2. Record-level verifier rejecting the chosen answer.
  if (verifier_flags.has_value() && !verifier_flags->empty()) {
    std::size_t passes = 0;
    for (const auto& f : *verifier_flags)
      if (f.pass) ++passes;
    double rate = static_cast<double>(passes) / static_cast<double>(verifier_flags->size());
    if (rate < dc.reason_verifier_threshold) return Reason::verifier_rejection;
  }

  // 3. Evidence coverage.
  auto coverage = feature_value(fc, z, FeatureId::rag_coverage);
  if (fc.rag && (degenerate_evidence ||
                 (coverage.has_value() && *coverage < dc.reason_coverage_threshold)))
    return Reason::low_evidence_coverage;

  // 4. Semantic dispersion.
  auto mass = feature_value(fc, z, FeatureId::sc_cluster_mass);
  if (mass.has_value() && *mass < dc.reason_dispersion_threshold)
    return Reason::high_semantic_dispersion;

  // 5. Largest standardized deviation from the answered-population mean,
  // oriented so "worse than usual" scores positive.
  const auto schema = fc.schema();
  double best_dev = -1e300;
  std::size_t best_j = 0;
  for (std::size_t j = 0; j < z.values.size(); ++j) {
    int orient = 1;
    if (schema[j] == "seq_entropy" || schema[j] == "sc_entropy" || schema[j] == "rag_conflict")
      orient = -1;
    double sd = j < artifact.feature_stats.stddev.size() ? artifact.feature_stats.stddev[j] : 1.0;
    double mean = j < artifact.feature_stats.mean.size() ? artifact.feature_stats.mean[j] : 0.0;
    double dev = orient * (mean - z.values[j]) / (sd > 1e-9 ? sd : 1.0);
    if (dev > best_dev) {
      best_dev = dev;
      best_j = j;
    }
  }
  return fallback_reason(schema.empty() ? "" : schema[best_j]);
}

std::string refusal_message(Reason reason, const MessageContext& context) {
  char conf[32];
  std::snprintf(conf, sizeof(conf), "%.2f", context.confidence);
  std::string head = "I'm not confident enough to answer (confidence ";
  head += conf;
  head += "): ";
  switch (reason) {
    case Reason::low_evidence_coverage: {
      std::string msg = head + "the retrieved evidence covers too little of the answer";
      if (context.evidence_coverage.has_value()) {
        char cov[32];
        std::snprintf(cov, sizeof(cov), "%.2f", *context.evidence_coverage);
        msg += " (coverage ";
        msg += cov;
        msg += ")";
      }
      msg += ". Would you like me to search for sources?";
      return msg;
    }
    case Reason::high_semantic_dispersion: {
      std::string msg = head + "independent attempts disagree with each other";
      if (context.cluster_mass.has_value()) {
        char cm[32];
        std::snprintf(cm, sizeof(cm), "%.2f", *context.cluster_mass);
        msg += " (largest cluster mass ";
        msg += cm;
        msg += ")";
      }
      msg += ". Rephrasing the question or sampling more candidates may help.";
      return msg;
    }
    case Reason::tool_failure:
      return head + "tool checks were inconsistent or failed for this answer.";
    case Reason::verifier_rejection:
      return head + "the verifier rejected the candidate answer.";
  }
  return head;
}

// ---------------------------------------------------------------------------
// Sessions and escalation
// ---------------------------------------------------------------------------

void SessionState::record(const DecisionOutcome& outcome) {
  if (!outcome.answer && !recent_outcomes.empty()) {
    const DecisionOutcome& prev = recent_outcomes.back();
    if (!prev.answer && prev.reason.has_value() && outcome.reason.has_value() &&
        *prev.reason == *outcome.reason)
      ++escalation_level;
  }
  recent_outcomes.push_back(outcome);
  while (recent_outcomes.size() > max_outcomes) recent_outcomes.pop_front();
}

PlanChange escalate(const SessionState& session) {
  if (session.recent_outcomes.size() < 2) return PlanChange::none;
  const DecisionOutcome& a = session.recent_outcomes[session.recent_outcomes.size() - 2];
  const DecisionOutcome& b = session.recent_outcomes.back();
  if (a.answer || b.answer) return PlanChange::none;
  if (!a.reason.has_value() || !b.reason.has_value() || *a.reason != *b.reason)
    return PlanChange::none;
  switch (*b.reason) {
    case Reason::high_semantic_dispersion: return PlanChange::increase_K;
    case Reason::low_evidence_coverage: return PlanChange::refresh_retrieval;
    default: return PlanChange::none;
  }
}

// ---------------------------------------------------------------------------
// Inference (risk-controlled answer-or-abstain)
// ---------------------------------------------------------------------------

namespace {

struct PassResult {
  AssembledFeatures feats;
  double confidence = 0.0;
  double tau = 0.0;
  std::optional<double> coverage;
};

PassResult run_pass(const CalibrationArtifact& artifact, const RawSignalsRecord& record) {
  PassResult out;
  try {
    out.feats = assemble_features(record, artifact.feature_config);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::missing_signal)
      throw Error(ErrorCode::schema_error,
                  std::string("record does not match artifact schema: ") + e.what());
    throw;
  }
  const IsotonicMap* iso =
      artifact.isotonic.has_value() ? &*artifact.isotonic : nullptr;
  out.confidence = predict_confidence(artifact.head, iso, out.feats.vec);
  int rag_idx = schema_index(artifact.feature_config, FeatureId::rag_coverage);
  if (rag_idx >= 0) out.coverage = out.feats.vec.values[rag_idx];
  out.tau = artifact.policy.tau_for(out.coverage);
  return out;
}

DecisionOutcome abstain_outcome(const CalibrationArtifact& artifact,
                                const RawSignalsRecord& record, const PassResult& pass,
                                bool retried) {
  DecisionOutcome out;
  out.id = record.id;
  out.answer = false;
  out.confidence = pass.confidence;
  out.retried = retried;
  out.reason = reason_tag(artifact, pass.feats.vec, pass.feats.degenerate_evidence,
                          record.verifier_flags);
  MessageContext ctx;
  ctx.confidence = pass.confidence;
  ctx.evidence_coverage = pass.coverage;
  int mass_idx = schema_index(artifact.feature_config, FeatureId::sc_cluster_mass);
  if (mass_idx >= 0) ctx.cluster_mass = pass.feats.vec.values[mass_idx];
  out.message = refusal_message(*out.reason, ctx);
  return out;
}

}  // namespace

DecisionOutcome infer(const CalibrationArtifact& artifact,
                      const RawSignalsRecord& record, SessionState* session,
                      const RetryCallback& retry) {
  PassResult pass = run_pass(artifact, record);

  DecisionOutcome outcome;
  if (pass.confidence >= pass.tau) {
    outcome.id = record.id;
    outcome.answer = true;
    outcome.confidence = pass.confidence;
  } else {
    // One retrieval retry when the confidence lands just below threshold and
    // evidence coverage is low.
    bool gate = artifact.feature_config.rag && retry != nullptr &&
                pass.coverage.has_value() &&
                *pass.coverage < artifact.decision.retry_coverage_threshold &&
                pass.confidence >= pass.tau - artifact.decision.retry_margin;
    if (gate) {
      std::optional<RawSignalsRecord> refreshed;
      bool callback_failed = false;
      try {
        refreshed = retry(record);
      } catch (...) {
        callback_failed = true;
      }
      if (callback_failed || !refreshed.has_value()) {
        outcome.id = record.id;
        outcome.answer = false;
        outcome.confidence = pass.confidence;
        outcome.retried = false;
        outcome.reason = Reason::tool_failure;
        MessageContext ctx;
        ctx.confidence = pass.confidence;
        outcome.message = refusal_message(Reason::tool_failure, ctx);
      } else {
        PassResult second;
        bool second_failed = false;
        try {
          second = run_pass(artifact, *refreshed);
        } catch (const Error&) {
          second_failed = true;
        }
        if (second_failed) {
          outcome.id = record.id;
          outcome.answer = false;
          outcome.confidence = pass.confidence;
          outcome.retried = false;
          outcome.reason = Reason::tool_failure;
          MessageContext ctx;
          ctx.confidence = pass.confidence;
          outcome.message = refusal_message(Reason::tool_failure, ctx);
        } else if (second.confidence >= second.tau) {
          outcome.id = record.id;
          outcome.answer = true;
          outcome.confidence = second.confidence;
          outcome.retried = true;
        } else {
          outcome = abstain_outcome(artifact, *refreshed, second, /*retried=*/true);
          outcome.id = record.id;
        }
      }
    } else {
      outcome = abstain_outcome(artifact, record, pass, /*retried=*/false);
    }
  }

  if (session != nullptr) session->record(outcome);
  return outcome;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void save_artifact(const CalibrationArtifact& artifact, const std::string& path) {
  artifact.validate();
  io::write_json_file(path, io::artifact_to_json(artifact));
}

CalibrationArtifact load_artifact(const std::string& path,
                                  std::optional<PolicyMode> expected_mode) {
  CalibrationArtifact artifact = io::artifact_from_json(io::read_json_file(path));
  artifact.validate();
  if (expected_mode.has_value() && artifact.policy.mode != *expected_mode)
    throw Error(ErrorCode::version_mismatch,
                std::string("artifact policy mode is ") + to_string(artifact.policy.mode) +
                    " but " + to_string(*expected_mode) + " was requested");
  return artifact;
}

}  // namespace unicr
