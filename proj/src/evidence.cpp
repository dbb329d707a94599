// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/evidence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "unicr/error.hpp"

namespace unicr {

namespace {

constexpr double kSymmetryTol = 1e-6;

[[noreturn]] void missing(const std::string& what) {
  throw Error(ErrorCode::missing_signal, what);
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature naming
// ---------------------------------------------------------------------------

const char* feature_name(FeatureId id) {
  switch (id) {
    case FeatureId::seq_loglik: return "seq_loglik";
    case FeatureId::seq_rank: return "seq_rank";
    case FeatureId::seq_entropy: return "seq_entropy";
    case FeatureId::sc_agree: return "sc_agree";
    case FeatureId::sc_entropy: return "sc_entropy";
    case FeatureId::sc_cluster_mass: return "sc_cluster_mass";
    case FeatureId::sc_avg_entailment: return "sc_avg_entailment";
    case FeatureId::rag_coverage: return "rag_coverage";
    case FeatureId::rag_align: return "rag_align";
    case FeatureId::rag_conflict: return "rag_conflict";
    case FeatureId::verifier_consistency: return "verifier_consistency";
    case FeatureId::tool_diag: return "tool_diag";
  }
  return "?";
}

int feature_orientation(FeatureId id) {
  switch (id) {
    case FeatureId::seq_entropy:
    case FeatureId::sc_entropy:
    case FeatureId::rag_conflict:
      return -1;
    default:
      return +1;
  }
}

namespace {

std::vector<FeatureId> enabled_ids(const FeatureConfig& c) {
  std::vector<FeatureId> ids;
  if (c.seq) {
    ids.push_back(FeatureId::seq_loglik);
    ids.push_back(FeatureId::seq_rank);
  }
  if (c.entropy) ids.push_back(FeatureId::seq_entropy);
  if (c.sc) {
    ids.push_back(FeatureId::sc_agree);
    ids.push_back(FeatureId::sc_entropy);
    ids.push_back(FeatureId::sc_cluster_mass);
  }
  if (c.entailment) ids.push_back(FeatureId::sc_avg_entailment);
  if (c.rag) {
    ids.push_back(FeatureId::rag_coverage);
    ids.push_back(FeatureId::rag_align);
    ids.push_back(FeatureId::rag_conflict);
  }
  if (c.verifier) ids.push_back(FeatureId::verifier_consistency);
  if (c.tool) ids.push_back(FeatureId::tool_diag);
  return ids;
}

}  // namespace

std::vector<std::string> FeatureConfig::schema() const {
  std::vector<std::string> names;
  for (FeatureId id : enabled_ids(*this)) names.emplace_back(feature_name(id));
  return names;
}

std::string FeatureConfig::schema_hash() const {
  std::string joined;
  for (const auto& name : schema()) {
    joined += name;
    joined += '\n';
  }
  std::uint64_t h = fnv1a64(joined);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

FeatureConfig FeatureConfig::api_only() const {
  FeatureConfig c = *this;
  c.seq = false;
  c.entropy = false;
  return c;
}

void FeatureConfig::validate() const {
  auto ids = enabled_ids(*this);
  if (ids.empty())
    throw Error(ErrorCode::config_error, "feature config enables no families; empty schema is invalid");
  int d = static_cast<int>(ids.size());
  if (d_min < 1 || d_max < d_min)
    throw Error(ErrorCode::config_error, "invalid feature dimensionality range");
  if (d < d_min || d > d_max) {
    std::ostringstream os;
    os << "schema has d=" << d << " outside configured range [" << d_min << "," << d_max << "]";
    throw Error(ErrorCode::config_error, os.str());
  }
  if (seq && reference_pool.empty())
    throw Error(ErrorCode::config_error,
                "seq family enabled but reference_pool is empty (seq_rank needs a pool)");
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(link_threshold) || !in01(support_threshold) || !in01(conflict_threshold))
    throw Error(ErrorCode::config_error, "feature thresholds must lie in [0,1]");
  for (double v : reference_pool)
    if (!std::isfinite(v)) throw Error(ErrorCode::config_error, "reference_pool entries must be finite");
}

std::vector<int> temperature_feature_indices(const FeatureConfig& config) {
  std::vector<int> idx;
  auto ids = enabled_ids(config);
  for (int i = 0; i < static_cast<int>(ids.size()); ++i)
    if (ids[i] == FeatureId::seq_loglik || ids[i] == FeatureId::seq_entropy) idx.push_back(i);
  return idx;
}

int schema_index(const FeatureConfig& config, FeatureId id) {
  auto ids = enabled_ids(config);
  for (int i = 0; i < static_cast<int>(ids.size()); ++i)
    if (ids[i] == id) return i;
  return -1;
}

// ---------------------------------------------------------------------------
// Sequence features
// ---------------------------------------------------------------------------

double length_normalized_loglik(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) missing("token_logprobs is empty");
  double sum = 0.0;
  for (double v : token_logprobs) {
    if (!std::isfinite(v) || v > 0.0)
      throw Error(ErrorCode::invalid_signal, "token log-probabilities must be finite and <= 0");
    sum += v;
  }
  return sum / static_cast<double>(token_logprobs.size());
}

double mean_token_entropy(std::span<const double> token_entropies) {
  if (token_entropies.empty()) missing("token_entropies is empty");
  double sum = 0.0;
  for (double v : token_entropies) {
    if (!std::isfinite(v) || v < 0.0)
      throw Error(ErrorCode::invalid_signal, "token entropies must be finite and >= 0");
    sum += v;
  }
  return sum / static_cast<double>(token_entropies.size());
}

double rank_normalized_logprob(double bar_ell, std::span<const double> reference_pool) {
  if (reference_pool.empty()) missing("reference pool is empty");
  std::size_t below = 0, ties = 0;
  for (double v : reference_pool) {
    if (v < bar_ell)
      ++below;
    else if (v == bar_ell)
      ++ties;
  }
  return (static_cast<double>(below) + 0.5 * static_cast<double>(ties)) /
         static_cast<double>(reference_pool.size());
}

// ---------------------------------------------------------------------------
// Self-consistency features
// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::size_t> answer_counts(const std::vector<SampleRecord>& samples) {
  if (samples.empty()) missing("no samples for self-consistency features");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) ++counts[s.answer_key];
  return counts;
}

}  // namespace

double agreement_rate(const std::vector<SampleRecord>& samples) {
  auto counts = answer_counts(samples);
  std::size_t best = 0;
  for (const auto& [key, n] : counts) best = std::max(best, n);
  return static_cast<double>(best) / static_cast<double>(samples.size());
}

double predictive_entropy(const std::vector<SampleRecord>& samples) {
  auto counts = answer_counts(samples);
  double k = static_cast<double>(samples.size());
  double h = 0.0;
  for (const auto& [key, n] : counts) {
    double p = static_cast<double>(n) / k;
    h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

double verifier_consistency(const std::vector<SampleRecord>& samples) {
  if (samples.empty()) missing("no samples for verifier consistency");
  std::size_t passes = 0;
  for (const auto& s : samples) {
    if (!s.verifier_pass.has_value()) missing("sample lacks verifier_pass");
    if (*s.verifier_pass) ++passes;
  }
  return static_cast<double>(passes) / static_cast<double>(samples.size());
}

namespace {

// Similarity row access with an answer-key-equality fallback when embedding
// similarities were not supplied (discrete tasks cluster by exact match).
struct SimilarityView {
  const std::vector<SampleRecord>& samples;
  bool has_rows;

  double at(std::size_t i, std::size_t j) const {
    if (has_rows) return (*samples[i].embedding_sim)[j];
    return samples[i].answer_key == samples[j].answer_key ? 1.0 : 0.0;
  }
};

SimilarityView make_similarity_view(const std::vector<SampleRecord>& samples) {
  const std::size_t k = samples.size();
  bool any = false, all = true;
  for (const auto& s : samples) {
    if (s.embedding_sim.has_value())
      any = true;
    else
      all = false;
  }
  if (any && !all)
    throw Error(ErrorCode::invalid_signal, "embedding_sim present on some samples but not all");
  if (all) {
    for (const auto& s : samples) {
      if (s.embedding_sim->size() != k)
        throw Error(ErrorCode::invalid_signal, "embedding_sim row length differs from K");
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (std::fabs((*samples[i].embedding_sim)[i] - 1.0) > kSymmetryTol)
        throw Error(ErrorCode::invalid_signal, "embedding_sim self-similarity must be 1");
      for (std::size_t j = i + 1; j < k; ++j) {
        double a = (*samples[i].embedding_sim)[j];
        double b = (*samples[j].embedding_sim)[i];
        if (std::fabs(a - b) > kSymmetryTol)
          throw Error(ErrorCode::invalid_signal, "embedding_sim matrix is asymmetric beyond tolerance");
      }
    }
  }
  return SimilarityView{samples, all};
}

}  // namespace

DispersionResult semantic_dispersion(const std::vector<SampleRecord>& samples,
                                     double link_threshold) {
  if (samples.empty()) missing("no samples for semantic dispersion");
  const std::size_t k = samples.size();
  DispersionResult out;
  if (k == 1) {
    out.largest_cluster_mass = 1.0;
    out.avg_pairwise_entailment = 0.0;  // singleton convention
    return out;
  }

  SimilarityView sim = make_similarity_view(samples);

  // Connected components over the thresholded similarity graph (union-find).
  std::vector<std::size_t> parent(k);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      if (sim.at(i, j) >= link_threshold) parent[find(i)] = find(j);

  std::map<std::size_t, std::size_t> sizes;
  for (std::size_t i = 0; i < k; ++i) ++sizes[find(i)];
  std::size_t largest = 0;
  for (const auto& [root, n] : sizes) largest = std::max(largest, n);
  out.largest_cluster_mass = static_cast<double>(largest) / static_cast<double>(k);

  // Mean off-diagonal entailment, when rows exist.
  bool any_ent = false, all_ent = true;
  for (const auto& s : samples) {
    if (s.entailment_pairs.has_value())
      any_ent = true;
    else
      all_ent = false;
  }
  if (any_ent && !all_ent)
    throw Error(ErrorCode::invalid_signal, "entailment_pairs present on some samples but not all");
  if (all_ent) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (samples[i].entailment_pairs->size() != k)
        throw Error(ErrorCode::invalid_signal, "entailment_pairs row length differs from K");
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        double v = (*samples[i].entailment_pairs)[j];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
          throw Error(ErrorCode::invalid_signal, "entailment_pairs entries must lie in [0,1]");
        sum += v;
        ++count;
      }
    }
    out.avg_pairwise_entailment = count ? sum / static_cast<double>(count) : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// RAG features
// ---------------------------------------------------------------------------

RagFeatures rag_features(const std::vector<ClaimScore>& claims,
                         double support_threshold, double conflict_threshold) {
  if (support_threshold < 0.0 || support_threshold > 1.0 || conflict_threshold < 0.0 ||
      conflict_threshold > 1.0)
    throw Error(ErrorCode::config_error, "rag thresholds must lie in [0,1]");
  RagFeatures out;
  std::size_t salient = 0, covered = 0, conflicting = 0;
  double align_sum = 0.0;
  for (const auto& c : claims) {
    if (!c.salient) continue;
    ++salient;
    if (c.max_passage_entailment >= support_threshold) ++covered;
    if (c.contradiction_score >= conflict_threshold) ++conflicting;
    align_sum += c.max_passage_entailment;
  }
  if (salient == 0) {
    out.degenerate = true;  // zeros, flagged; feeds the low-evidence reason
    return out;
  }
  double s = static_cast<double>(salient);
  out.coverage = static_cast<double>(covered) / s;
  out.align = align_sum / s;
  out.conflict = static_cast<double>(conflicting) / s;
  return out;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

AssembledFeatures assemble_features(const RawSignalsRecord& record,
                                    const FeatureConfig& config) {
  config.validate();
  auto ids = enabled_ids(config);

  AssembledFeatures out;
  out.vec.values.reserve(ids.size());
  out.vec.schema = config.schema();

  // Families are computed lazily and at most once.
  std::optional<double> bar_ell;
  std::optional<DispersionResult> dispersion;
  std::optional<RagFeatures> rag;

  auto need_samples = [&]() -> const std::vector<SampleRecord>& {
    if (record.samples.empty()) missing("sc family enabled but record has no samples");
    return record.samples;
  };

  for (FeatureId id : ids) {
    double value = 0.0;
    switch (id) {
      case FeatureId::seq_loglik: {
        if (!record.token_logprobs.has_value())
          missing("seq family enabled but token_logprobs missing");
        bar_ell = length_normalized_loglik(*record.token_logprobs);
        value = *bar_ell;
        break;
      }
      case FeatureId::seq_rank: {
        if (!bar_ell.has_value()) {
          if (!record.token_logprobs.has_value())
            missing("seq family enabled but token_logprobs missing");
          bar_ell = length_normalized_loglik(*record.token_logprobs);
        }
        value = rank_normalized_logprob(*bar_ell, config.reference_pool);
        break;
      }
      case FeatureId::seq_entropy: {
        if (!record.token_entropies.has_value())
          missing("entropy family enabled but token_entropies missing");
        value = mean_token_entropy(*record.token_entropies);
        break;
      }
      case FeatureId::sc_agree:
        value = agreement_rate(need_samples());
        break;
      case FeatureId::sc_entropy:
        value = predictive_entropy(need_samples());
        break;
      case FeatureId::sc_cluster_mass: {
        if (!dispersion.has_value())
          dispersion = semantic_dispersion(need_samples(), config.link_threshold);
        value = dispersion->largest_cluster_mass;
        break;
      }
      case FeatureId::sc_avg_entailment: {
        const auto& samples = need_samples();
        bool all_rows = !samples.empty();
        for (const auto& s : samples)
          if (!s.entailment_pairs.has_value()) all_rows = false;
        if (!all_rows && samples.size() > 1)
          missing("entailment family enabled but entailment_pairs missing");
        if (!dispersion.has_value())
          dispersion = semantic_dispersion(samples, config.link_threshold);
        value = dispersion->avg_pairwise_entailment;
        break;
      }
      case FeatureId::rag_coverage:
      case FeatureId::rag_align:
      case FeatureId::rag_conflict: {
        if (!rag.has_value()) {
          if (record.claims.empty()) {
            // No claims at all: degenerate evidence, zeros plus flag.
            rag = RagFeatures{};
            rag->degenerate = true;
          } else {
            rag = rag_features(record.claims, config.support_threshold,
                               config.conflict_threshold);
          }
        }
        if (id == FeatureId::rag_coverage) value = rag->coverage;
        if (id == FeatureId::rag_align) value = rag->align;
        if (id == FeatureId::rag_conflict) value = rag->conflict;
        break;
      }
      case FeatureId::verifier_consistency:
        value = verifier_consistency(need_samples());
        break;
      case FeatureId::tool_diag: {
        if (!record.tool_diag.has_value())
          missing("tool family enabled but tool_diag missing");
        value = *record.tool_diag;
        if (!std::isfinite(value) || value < 0.0 || value > 1.0)
          throw Error(ErrorCode::invalid_signal, "tool_diag must lie in [0,1]");
        break;
      }
    }
    if (!std::isfinite(value))
      throw Error(ErrorCode::invalid_signal,
                  std::string("non-finite feature value for ") + feature_name(id));
    out.vec.values.push_back(value);
  }

  out.degenerate_evidence = rag.has_value() && rag->degenerate;
  return out;
}

}  // namespace unicr
