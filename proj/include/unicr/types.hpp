// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace unicr {

// ---------------------------------------------------------------------------
// Correctness supervision
// ---------------------------------------------------------------------------

enum class LabelKind { exact, executed, graded };

const char* to_string(LabelKind kind);
LabelKind label_kind_from_string(const std::string& s);

/// Correctness target. exact/executed carry {0,1}; graded carries a
/// factuality surrogate in [0,1].
struct CorrectnessLabel {
  LabelKind kind = LabelKind::exact;
  double value = 0.0;

  bool is_binary() const { return kind != LabelKind::graded; }
};

// ---------------------------------------------------------------------------
// Raw upstream signals
// ---------------------------------------------------------------------------

/// One of the K sampled candidates. Pairwise rows, when present, are indexed
/// against the record's sample order and have length K with self-entry 1.
struct SampleRecord {
  std::string answer_key;
  std::optional<std::vector<double>> embedding_sim;
  std::optional<std::vector<double>> entailment_pairs;
  std::optional<bool> verifier_pass;
};

/// Per-claim scores produced by the upstream entailment stack.
struct ClaimScore {
  double entailment = 0.0;
  bool contradicted = false;
  bool salient = true;
  double max_passage_entailment = 0.0;
  double contradiction_score = 0.0;
};

struct VerifierFlag {
  bool pass = false;
  std::optional<double> score;
};

/// One example's raw upstream outputs, as parsed from a records JSONL line.
/// All generation, retrieval, NLI and execution happen upstream; only their
/// numeric residue arrives here.
struct RawSignalsRecord {
  std::string id;
  std::optional<std::vector<double>> token_logprobs;   // natural log, <= 0
  std::optional<std::vector<double>> token_entropies;  // nats, >= 0
  std::vector<SampleRecord> samples;
  std::vector<ClaimScore> claims;
  std::optional<std::vector<VerifierFlag>> verifier_flags;
  std::optional<double> tool_diag;  // in [0,1]
  std::optional<CorrectnessLabel> label;
  std::optional<std::string> bucket_hint;
  // Synthetic-data ground truth; stripped on export unless asked for.
  std::optional<double> debug_true_p;
};

// ---------------------------------------------------------------------------
// Fused evidence
// ---------------------------------------------------------------------------

/// Ordered, named evidence vector z(x).
struct FeatureVector {
  std::vector<double> values;
  std::vector<std::string> schema;

  std::size_t d() const { return values.size(); }
};

}  // namespace unicr
