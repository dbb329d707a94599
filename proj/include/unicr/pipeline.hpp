// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unicr/evidence.hpp"
#include "unicr/head.hpp"
#include "unicr/risk.hpp"
#include "unicr/types.hpp"

namespace unicr {

inline constexpr const char* kArtifactVersion = "unicr-artifact/1";

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct SplitFractions {
  double train = 0.6;
  double tune = 0.2;
  double calibrate = 0.2;
};

struct PolicyConfig {
  PolicyMode mode = PolicyMode::conformal;
  double alpha_or_rho = 0.05;
  std::vector<double> bucket_edges;  // interior edges for bucketed mode
  QuantileSmoothing smoothing = QuantileSmoothing::none;
  int min_bucket_size = 30;
};

struct DecisionConfig {
  // Retry gate: one retrieval refresh when the confidence lands just below
  // threshold and evidence coverage is low.
  double retry_margin = 0.05;
  double retry_coverage_threshold = 0.5;
  // Reason-tag ladder thresholds.
  double reason_coverage_threshold = 0.5;
  double reason_dispersion_threshold = 0.5;
  double reason_tool_threshold = 0.5;
  double reason_verifier_threshold = 0.5;
};

struct RunConfig {
  FeatureConfig features;
  HeadFitConfig head;
  PolicyConfig policy;
  DecisionConfig decision;
  SplitFractions split;
  std::uint64_t seed = 42;
  bool isotonic = false;        // forced on for mlp2 heads
  bool isotonic_explicit = false;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Calibration artifact
// ---------------------------------------------------------------------------

/// Per-feature standardization constants over the answered population,
/// backing the reason-tag fallback.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Provenance {
  std::uint64_t seed = 0;
  SplitFractions split;
  double alpha_or_rho = 0.05;
  PolicyMode mode = PolicyMode::conformal;
  std::string config_hash;
  std::string created;  // honors SOURCE_DATE_EPOCH so artifacts reproduce
};

/// The single deployable object: head, optional isotonic post-map, threshold
/// policy, the feature schema they were fitted for, and provenance.
struct CalibrationArtifact {
  std::string version = kArtifactVersion;
  HeadModel head;
  std::optional<IsotonicMap> isotonic;
  ThresholdPolicy policy;
  FeatureConfig feature_config;
  DecisionConfig decision;
  FeatureStats feature_stats;
  Provenance provenance;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Decisions
// ---------------------------------------------------------------------------

enum class Reason {
  low_evidence_coverage,
  high_semantic_dispersion,
  tool_failure,
  verifier_rejection,
};

const char* to_string(Reason reason);
Reason reason_from_string(const std::string& s);

struct DecisionOutcome {
  std::string id;
  bool answer = false;
  double confidence = 0.0;
  std::optional<Reason> reason;  // present iff abstain
  bool retried = false;
  std::string message;
};

enum class PlanChange { none, increase_K, refresh_retrieval };

const char* to_string(PlanChange change);

/// Rolling per-conversation refusal state. escalation_level increments only
/// when the last two refusals share a reason.
struct SessionState {
  std::deque<DecisionOutcome> recent_outcomes;
  int escalation_level = 0;
  std::size_t max_outcomes = 8;

  void record(const DecisionOutcome& outcome);
};

/// Caller-provided retrieval refresh; returns the refreshed record or
/// nullopt on failure. Keeps the artifact free of retriever dependencies.
using RetryCallback =
    std::function<std::optional<RawSignalsRecord>(const RawSignalsRecord&)>;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// End-to-end training: split, assemble, fit head (+ optional isotonic on
/// the tune split), select thresholds on the calibration split. Fully
/// deterministic given the seed.
CalibrationArtifact train(const std::vector<RawSignalsRecord>& records,
                          const RunConfig& config);

/// Risk-controlled answer-or-abstain for one record, with at most one
/// retrieval retry through the callback.
DecisionOutcome infer(const CalibrationArtifact& artifact,
                      const RawSignalsRecord& record,
                      SessionState* session = nullptr,
                      const RetryCallback& retry = nullptr);

/// Reason for an already-decided abstention: fixed ladder (tool failure,
/// verifier rejection, low coverage, high dispersion) with a standardized-
/// deviation fallback over the artifact's answered-population stats.
Reason reason_tag(const CalibrationArtifact& artifact, const FeatureVector& z,
                  bool degenerate_evidence,
                  const std::optional<std::vector<VerifierFlag>>& verifier_flags);

struct MessageContext {
  double confidence = 0.0;
  std::optional<double> evidence_coverage;
  std::optional<double> cluster_mass;
};

/// Deterministic templated refusal text, parameterized by context.
std::string refusal_message(Reason reason, const MessageContext& context);

/// Plan change after two consecutive same-reason refusals.
PlanChange escalate(const SessionState& session);

/// Canonical-JSON artifact serialization: sorted keys, shortest round-trip
/// reals. Loading verifies version and schema hash before any prediction.
void save_artifact(const CalibrationArtifact& artifact, const std::string& path);
CalibrationArtifact load_artifact(const std::string& path,
                                  std::optional<PolicyMode> expected_mode = {});

}  // namespace unicr
