// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <vector>

#include "unicr/types.hpp"

namespace unicr {

/// Graded factuality surrogate: mean over all claims of entailment with
/// contradicted claims zeroed. The denominator is the full claim count, so
/// contradicted claims pull the score down rather than dropping out.
CorrectnessLabel factual_surrogate(const std::vector<ClaimScore>& claims);

/// Binary exact-match label.
CorrectnessLabel exact_label(bool match);

}  // namespace unicr
