// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/targets.hpp"

#include <doctest.h>

#include "unicr/error.hpp"
#include "unicr/rng.hpp"
#include "test_util.hpp"

using namespace unicr;

namespace {

ClaimScore claim_with(double entailment, bool contradicted) {
  ClaimScore c;
  c.entailment = entailment;
  c.contradicted = contradicted;
  c.salient = true;
  c.max_passage_entailment = entailment;
  c.contradiction_score = contradicted ? 0.9 : 0.1;
  return c;
}

}  // namespace

TEST_CASE("factual_surrogate worked example") {
  std::vector<ClaimScore> claims{claim_with(0.8, false), claim_with(0.6, false),
                                 claim_with(1.0, true)};
  CorrectnessLabel label = factual_surrogate(claims);
  CHECK(label.kind == LabelKind::graded);
  CHECK(label.value == doctest::Approx(1.4 / 3.0));
}

TEST_CASE("factual_surrogate extremes") {
  std::vector<ClaimScore> perfect{claim_with(1.0, false), claim_with(1.0, false)};
  CHECK(factual_surrogate(perfect).value == doctest::Approx(1.0));

  std::vector<ClaimScore> contradicted{claim_with(0.9, true), claim_with(0.7, true)};
  CHECK(factual_surrogate(contradicted).value == doctest::Approx(0.0));

  CHECK_THROWS_AS(factual_surrogate({}), Error);
}

TEST_CASE("factual_surrogate is monotone and bounded") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    int n = rng.uniform_int(1, 8);
    std::vector<ClaimScore> claims;
    for (int i = 0; i < n; ++i) claims.push_back(claim_with(rng.uniform(), rng.bernoulli(0.3)));
    double base = factual_surrogate(claims).value;
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);

    // Raising a non-contradicted claim's entailment never decreases the score.
    int pick = rng.uniform_int(0, n - 1);
    if (!claims[pick].contradicted) {
      auto raised = claims;
      raised[pick].entailment = std::min(1.0, raised[pick].entailment + rng.uniform(0.0, 0.5));
      CHECK(factual_surrogate(raised).value >= base - 1e-12);
    }
    // Marking any claim contradicted never increases it.
    auto marked = claims;
    marked[pick].contradicted = true;
    CHECK(factual_surrogate(marked).value <= base + 1e-12);
  }
}

TEST_CASE("exact_label") {
  CHECK(exact_label(true).value == 1.0);
  CHECK(exact_label(true).kind == LabelKind::exact);
  CHECK(exact_label(false).value == 0.0);
}
