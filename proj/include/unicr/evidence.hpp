// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unicr/types.hpp"

namespace unicr {

// ---------------------------------------------------------------------------
// Feature configuration
// ---------------------------------------------------------------------------

/// Which evidence families enter z(x), plus the thresholds they use.
/// Families whose raw signals are absent must be disabled; enabled families
/// with missing signals raise missing_signal rather than imputing.
struct FeatureConfig {
  // Logit-derived families. Off in API-only deployments.
  bool seq = true;      // seq_loglik, seq_rank
  bool entropy = true;  // seq_entropy
  // Black-box families.
  bool sc = true;           // sc_agree, sc_entropy, sc_cluster_mass
  bool entailment = false;  // sc_avg_entailment (needs pairwise NLI rows)
  bool rag = true;          // rag_coverage, rag_align, rag_conflict
  bool verifier = false;    // verifier_consistency (per-sample pass bits)
  bool tool = false;        // tool_diag

  double link_threshold = 0.75;
  double support_threshold = 0.5;
  double conflict_threshold = 0.5;

  // Reference pool of length-normalized log-likelihoods from development
  // text; required when seq is enabled (drives seq_rank).
  std::vector<double> reference_pool;

  // Accepted dimensionality range for the assembled vector.
  int d_min = 1;
  int d_max = 32;

  /// Ordered feature names implied by the enabled families.
  std::vector<std::string> schema() const;
  /// FNV-1a hash of the schema, hex-encoded. Guards artifact/head agreement.
  std::string schema_hash() const;

  /// Drop the logit-derived families (API-only deployment).
  FeatureConfig api_only() const;

  void validate() const;
};

/// Assembled evidence plus the degenerate-evidence marker (zero salient
/// claims). The marker feeds the low-evidence reason tag downstream.
struct AssembledFeatures {
  FeatureVector vec;
  bool degenerate_evidence = false;
};

// ---------------------------------------------------------------------------
// Individual evidence operations
// ---------------------------------------------------------------------------

/// Mean of per-token natural-log probabilities.
double length_normalized_loglik(std::span<const double> token_logprobs);

/// Mean per-position entropy in nats.
double mean_token_entropy(std::span<const double> token_entropies);

/// Mid-rank percentile of bar_ell within a reference pool: strictly-below
/// count plus half the ties, over the pool size.
double rank_normalized_logprob(double bar_ell, std::span<const double> reference_pool);

/// Largest empirical answer share max_a count(a)/K.
double agreement_rate(const std::vector<SampleRecord>& samples);

/// Entropy of the empirical answer distribution, in nats.
double predictive_entropy(const std::vector<SampleRecord>& samples);

/// Fraction of samples passing the verifier. Every sample must carry a flag.
double verifier_consistency(const std::vector<SampleRecord>& samples);

struct DispersionResult {
  double largest_cluster_mass = 0.0;
  double avg_pairwise_entailment = 0.0;
};

/// Connected-component clustering over the similarity graph with edges at
/// sim >= link_threshold; mass of the largest component over K, plus the
/// mean off-diagonal pairwise entailment (0 by convention for K = 1).
/// Similarity rows must be symmetric within 1e-6.
DispersionResult semantic_dispersion(const std::vector<SampleRecord>& samples,
                                     double link_threshold);

struct RagFeatures {
  double coverage = 0.0;
  double align = 0.0;
  double conflict = 0.0;
  bool degenerate = false;  // zero salient claims
};

/// Coverage / align / conflict over the salient claims. Zero salient claims
/// yields zeros plus the degenerate flag instead of an error.
RagFeatures rag_features(const std::vector<ClaimScore>& claims,
                         double support_threshold, double conflict_threshold);

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Deterministic fused vector in canonical schema order. Pure: identical
/// record and config give a bit-identical vector.
AssembledFeatures assemble_features(const RawSignalsRecord& record,
                                    const FeatureConfig& config);

/// Canonical feature names, in schema order, for the feature ids below.
enum class FeatureId {
  seq_loglik,
  seq_rank,
  seq_entropy,
  sc_agree,
  sc_entropy,
  sc_cluster_mass,
  sc_avg_entailment,
  rag_coverage,
  rag_align,
  rag_conflict,
  verifier_consistency,
  tool_diag,
};

const char* feature_name(FeatureId id);

/// +1 when larger values indicate a healthier answer, -1 otherwise.
/// Used to orient standardized deviations in the refusal reason fallback.
int feature_orientation(FeatureId id);

/// Indices (into the config's schema) of features that temperature scaling
/// applies to: the raw log-scale sequence quantities.
std::vector<int> temperature_feature_indices(const FeatureConfig& config);

/// Index of a named feature in the config's schema, or -1.
int schema_index(const FeatureConfig& config, FeatureId id);

}  // namespace unicr
