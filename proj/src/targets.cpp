// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/targets.hpp"

#include <algorithm>
#include <cmath>

#include "unicr/error.hpp"

namespace unicr {

const char* to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::exact: return "exact";
    case LabelKind::executed: return "executed";
    case LabelKind::graded: return "graded";
  }
  return "?";
}

LabelKind label_kind_from_string(const std::string& s) {
  if (s == "exact") return LabelKind::exact;
  if (s == "executed") return LabelKind::executed;
  if (s == "graded") return LabelKind::graded;
  throw Error(ErrorCode::data_error, "unknown label kind \"" + s + "\"");
}

CorrectnessLabel factual_surrogate(const std::vector<ClaimScore>& claims) {
  if (claims.empty())
    throw Error(ErrorCode::invalid_signal, "factual surrogate needs at least one claim");
  double sum = 0.0;
  for (const auto& c : claims) {
    if (!std::isfinite(c.entailment) || c.entailment < 0.0 || c.entailment > 1.0)
      throw Error(ErrorCode::invalid_signal, "claim entailment must lie in [0,1]");
    if (!c.contradicted) sum += c.entailment;
  }
  // Contradicted claims contribute zero but still count in the denominator.
  double value = sum / static_cast<double>(claims.size());
  return CorrectnessLabel{LabelKind::graded, std::clamp(value, 0.0, 1.0)};
}

CorrectnessLabel exact_label(bool match) {
  return CorrectnessLabel{LabelKind::exact, match ? 1.0 : 0.0};
}

}  // namespace unicr
