// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/pipeline.hpp"

#include <cmath>

#include <doctest.h>

#include "unicr/error.hpp"
#include "unicr/io.hpp"
#include "unicr/metrics.hpp"
#include "unicr/rng.hpp"
#include "unicr/simulate.hpp"
#include "test_util.hpp"

using namespace unicr;

namespace {

// Hand-built artifact with confidence driven only by sc_agree and tool_diag:
//   c = sigmoid(3 * agree + 4 * tool - 4), threshold 0.42.
// The rag / verifier features carry zero weight, so reason-tag inputs can be
// varied without moving the confidence.
CalibrationArtifact trace_artifact() {
  CalibrationArtifact a;
  a.feature_config.seq = false;
  a.feature_config.entropy = false;
  a.feature_config.sc = true;
  a.feature_config.entailment = false;
  a.feature_config.rag = true;
  a.feature_config.verifier = true;
  a.feature_config.tool = true;
  // Schema: sc_agree, sc_entropy, sc_cluster_mass, rag_coverage, rag_align,
  //         rag_conflict, verifier_consistency, tool_diag.
  a.head.kind = HeadKind::logistic;
  a.head.d = 8;
  a.head.weights = {3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0, -4.0};
  a.head.schema_hash = a.feature_config.schema_hash();
  a.policy.mode = PolicyMode::validation;
  a.policy.global_tau = 0.42;
  a.policy.alpha_or_rho = 0.3;
  a.policy.calibration_size = 10;
  a.feature_stats.mean.assign(8, 0.5);
  a.feature_stats.stddev.assign(8, 1.0);
  a.validate();
  return a;
}

// One record shaped for the trace artifact.
RawSignalsRecord trace_record(const std::string& id, double agree_target, double tool,
                              double coverage, bool verifier_pass_all = true,
                              bool verifier_flags_pass = true) {
  RawSignalsRecord r;
  r.id = id;
  std::vector<std::string> keys;
  if (agree_target >= 0.99)
    keys = {"A", "A", "A"};
  else if (agree_target >= 0.6)
    keys = {"A", "A", "B"};
  else
    keys = {"A", "B", "C"};
  r.samples = testutil::samples_from_keys(keys);
  for (auto& s : r.samples) s.verifier_pass = verifier_pass_all;
  int supported = static_cast<int>(std::lround(coverage * 10.0));
  for (int i = 0; i < 10; ++i)
    r.claims.push_back(testutil::claim(i < supported ? 0.9 : 0.1, 0.0));
  r.verifier_flags = std::vector<VerifierFlag>{{verifier_flags_pass, std::nullopt},
                                               {verifier_flags_pass, std::nullopt}};
  r.tool_diag = tool;
  return r;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

RunConfig training_config(PolicyMode mode, double alpha_or_rho, std::uint64_t seed) {
  RunConfig config;
  config.features = default_simulate_spec().synthetic.features;
  config.head.kind = HeadKind::logistic;
  config.head.seed = static_cast<std::int64_t>(seed);
  config.policy.mode = mode;
  config.policy.alpha_or_rho = alpha_or_rho;
  config.seed = seed;
  return config;
}

std::vector<RawSignalsRecord> training_records(int n, std::uint64_t seed) {
  SyntheticSpec spec = default_simulate_spec().synthetic;
  spec.n = n;
  spec.seed = seed;
  return generate_synthetic(spec);
}

}  // namespace

// ---------------------------------------------------------------------------
// Alg. 2 control flow
// ---------------------------------------------------------------------------

TEST_CASE("infer answers above threshold") {
  auto artifact = trace_artifact();
  auto outcome = infer(artifact, trace_record("r", 1.0, 0.9, 0.9));
  CHECK(outcome.answer);
  CHECK(outcome.confidence == doctest::Approx(sigmoid(3.0 + 3.6 - 4.0)));
  CHECK_FALSE(outcome.reason.has_value());
  CHECK_FALSE(outcome.retried);
}

TEST_CASE("infer abstains without retry when evidence coverage is healthy") {
  auto artifact = trace_artifact();
  int calls = 0;
  RetryCallback cb = [&](const RawSignalsRecord& r) {
    ++calls;
    return std::optional<RawSignalsRecord>{r};
  };
  // c ~ 0.400, inside the retry margin, but coverage 0.9 blocks the retry.
  auto outcome = infer(artifact, trace_record("r", 1.0 / 3.0, 0.6486, 0.9), nullptr, cb);
  CHECK_FALSE(outcome.answer);
  CHECK_FALSE(outcome.retried);
  CHECK(calls == 0);
  REQUIRE(outcome.reason.has_value());
  CHECK(*outcome.reason == Reason::high_semantic_dispersion);
}

TEST_CASE("infer retries once and answers when the refreshed record clears tau") {
  auto artifact = trace_artifact();
  int calls = 0;
  RetryCallback cb = [&](const RawSignalsRecord&) {
    ++calls;
    return std::optional<RawSignalsRecord>{trace_record("r", 1.0 / 3.0, 0.75, 0.9)};
  };
  // First pass: c = sigmoid(1 + 2.48 - 4) ~ 0.373, coverage 0.1.
  auto outcome = infer(artifact, trace_record("r", 1.0 / 3.0, 0.62, 0.1), nullptr, cb);
  CHECK(calls == 1);
  CHECK(outcome.answer);
  CHECK(outcome.retried);
  CHECK(outcome.confidence == doctest::Approx(0.5));
}

TEST_CASE("infer retries once and abstains with the refreshed record's reason") {
  auto artifact = trace_artifact();
  RetryCallback cb = [&](const RawSignalsRecord&) {
    return std::optional<RawSignalsRecord>{trace_record("r", 1.0 / 3.0, 0.5, 0.3)};
  };
  auto outcome = infer(artifact, trace_record("r", 1.0 / 3.0, 0.62, 0.1), nullptr, cb);
  CHECK_FALSE(outcome.answer);
  CHECK(outcome.retried);
  REQUIRE(outcome.reason.has_value());
  CHECK(*outcome.reason == Reason::low_evidence_coverage);
}

TEST_CASE("callback failure during retry abstains with tool_failure") {
  auto artifact = trace_artifact();
  RetryCallback cb = [&](const RawSignalsRecord&) -> std::optional<RawSignalsRecord> {
    return std::nullopt;
  };
  auto outcome = infer(artifact, trace_record("r", 1.0 / 3.0, 0.62, 0.1), nullptr, cb);
  CHECK_FALSE(outcome.answer);
  CHECK_FALSE(outcome.retried);  // no second feature assembly happened
  REQUIRE(outcome.reason.has_value());
  CHECK(*outcome.reason == Reason::tool_failure);
}

TEST_CASE("infer is a pure function of artifact and record") {
  auto artifact = trace_artifact();
  auto record = trace_record("r", 1.0 / 3.0, 0.45, 0.8);
  auto a = infer(artifact, record);
  auto b = infer(artifact, record);
  CHECK(a.answer == b.answer);
  CHECK(a.confidence == b.confidence);
  CHECK(a.reason == b.reason);
  CHECK(a.message == b.message);
}

TEST_CASE("infer rejects records that do not match the artifact schema") {
  auto artifact = trace_artifact();
  RawSignalsRecord record = trace_record("r", 1.0, 0.9, 0.9);
  record.tool_diag.reset();
  CHECK_THROWS_AS(infer(artifact, record), Error);
}

// ---------------------------------------------------------------------------
// Reason ladder
// ---------------------------------------------------------------------------

TEST_CASE("reason ladder ordering") {
  auto artifact = trace_artifact();
  SUBCASE("failing tool diagnostic heads the ladder") {
    auto outcome = infer(artifact, trace_record("r", 1.0 / 3.0, 0.3, 0.0));
    REQUIRE(outcome.reason.has_value());
    CHECK(*outcome.reason == Reason::tool_failure);
  }
  SUBCASE("verifier consistency failing across samples reads as tool failure") {
    auto record = trace_record("r", 1.0 / 3.0, 0.55, 0.9, /*verifier_pass_all=*/false);
    auto outcome = infer(artifact, record);
    REQUIRE(outcome.reason.has_value());
    CHECK(*outcome.reason == Reason::tool_failure);
  }
  SUBCASE("record-level verifier flags rejecting the answer") {
    auto record = trace_record("r", 1.0 / 3.0, 0.6, 0.9, true, /*verifier_flags_pass=*/false);
    auto outcome = infer(artifact, record);
    REQUIRE(outcome.reason.has_value());
    CHECK(*outcome.reason == Reason::verifier_rejection);
  }
  SUBCASE("low coverage outranks high dispersion") {
    // Coverage 0.0 and singleton clusters at once: ladder order decides.
    auto outcome = infer(artifact, trace_record("r", 1.0 / 3.0, 0.55, 0.0));
    REQUIRE(outcome.reason.has_value());
    CHECK(*outcome.reason == Reason::low_evidence_coverage);
  }
  SUBCASE("dispersion fires when coverage is healthy") {
    auto outcome = infer(artifact, trace_record("r", 1.0 / 3.0, 0.55, 0.8));
    REQUIRE(outcome.reason.has_value());
    CHECK(*outcome.reason == Reason::high_semantic_dispersion);
  }
}

TEST_CASE("reason fallback picks the largest standardized deviation") {
  CalibrationArtifact a;
  a.feature_config.seq = false;
  a.feature_config.entropy = false;
  a.feature_config.sc = false;
  a.feature_config.entailment = false;
  a.feature_config.rag = true;
  a.feature_config.verifier = false;
  a.feature_config.tool = true;
  a.head.kind = HeadKind::logistic;
  a.head.d = 4;  // rag_coverage, rag_align, rag_conflict, tool_diag
  a.head.weights = {0.0, 0.0, 0.0, 0.0, 0.0};
  a.head.schema_hash = a.feature_config.schema_hash();
  a.feature_stats.mean = {0.9, 0.9, 0.1, 0.6};
  a.feature_stats.stddev = {0.1, 0.1, 0.1, 0.1};

  FeatureVector z;
  z.schema = a.feature_config.schema();

  SUBCASE("rag coverage deviates the most") {
    // All above their ladder thresholds, so only the fallback can fire.
    z.values = {0.55, 0.88, 0.12, 0.58};
    CHECK(reason_tag(a, z, false, std::nullopt) == Reason::low_evidence_coverage);
  }
  SUBCASE("tool diagnostic deviates the most") {
    a.feature_stats.mean = {0.9, 0.9, 0.1, 0.99};
    z.values = {0.88, 0.88, 0.12, 0.55};
    CHECK(reason_tag(a, z, false, std::nullopt) == Reason::tool_failure);
  }
  SUBCASE("oriented deviation: conflict counts when unusually high") {
    a.feature_stats.mean = {0.9, 0.9, 0.05, 0.6};
    z.values = {0.89, 0.89, 0.49, 0.6};  // conflict below its 0.5 threshold
    CHECK(reason_tag(a, z, false, std::nullopt) == Reason::low_evidence_coverage);
  }
}

// ---------------------------------------------------------------------------
// Refusal text, sessions, escalation
// ---------------------------------------------------------------------------

TEST_CASE("refusal messages") {
  MessageContext ctx;
  ctx.confidence = 0.28;
  ctx.evidence_coverage = 0.1;
  std::string low = refusal_message(Reason::low_evidence_coverage, ctx);
  CHECK(low.find("search") != std::string::npos);
  CHECK(low.find("0.28") != std::string::npos);
  CHECK(refusal_message(Reason::low_evidence_coverage, ctx) == low);  // deterministic
  std::string tool = refusal_message(Reason::tool_failure, ctx);
  CHECK(tool.find("tool") != std::string::npos);
  std::string verifier = refusal_message(Reason::verifier_rejection, ctx);
  CHECK(verifier.find("verifier") != std::string::npos);
  std::string dispersion = refusal_message(Reason::high_semantic_dispersion, ctx);
  CHECK(dispersion.find("disagree") != std::string::npos);
}

namespace {

DecisionOutcome abstained(Reason reason) {
  DecisionOutcome o;
  o.answer = false;
  o.reason = reason;
  return o;
}

DecisionOutcome answered() {
  DecisionOutcome o;
  o.answer = true;
  return o;
}

}  // namespace

TEST_CASE("escalate") {
  SessionState session;
  SUBCASE("two dispersion refusals increase K") {
    session.record(abstained(Reason::high_semantic_dispersion));
    session.record(abstained(Reason::high_semantic_dispersion));
    CHECK(escalate(session) == PlanChange::increase_K);
    CHECK(session.escalation_level == 1);
  }
  SUBCASE("two coverage refusals refresh retrieval") {
    session.record(abstained(Reason::low_evidence_coverage));
    session.record(abstained(Reason::low_evidence_coverage));
    CHECK(escalate(session) == PlanChange::refresh_retrieval);
  }
  SUBCASE("different reasons do nothing") {
    session.record(abstained(Reason::low_evidence_coverage));
    session.record(abstained(Reason::high_semantic_dispersion));
    CHECK(escalate(session) == PlanChange::none);
    CHECK(session.escalation_level == 0);
  }
  SUBCASE("an answer breaks the chain") {
    session.record(answered());
    session.record(abstained(Reason::high_semantic_dispersion));
    CHECK(escalate(session) == PlanChange::none);
  }
  SUBCASE("tool failure pairs do not change the plan") {
    session.record(abstained(Reason::tool_failure));
    session.record(abstained(Reason::tool_failure));
    CHECK(escalate(session) == PlanChange::none);
    CHECK(session.escalation_level == 1);  // still counted as repeated refusals
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TEST_CASE("train produces a risk-respecting conformal artifact") {
  auto records = training_records(2000, 314);
  RunConfig config = training_config(PolicyMode::conformal, 0.05, 11);
  CalibrationArtifact artifact = train(records, config);
  CHECK(artifact.policy.mode == PolicyMode::conformal);
  CHECK(artifact.policy.calibration_size == 400);

  // Re-evaluate the selective risk on the calibration split.
  SplitIndices split = ltt_split(records.size(), 0.6, 0.2, 0.2, config.seed);
  const IsotonicMap* iso = artifact.isotonic.has_value() ? &*artifact.isotonic : nullptr;
  std::vector<double> conf, losses;
  for (std::size_t i : split.calibrate) {
    AssembledFeatures f = assemble_features(records[i], artifact.feature_config);
    conf.push_back(predict_confidence(artifact.head, iso, f.vec));
    losses.push_back(1.0 - records[i].label->value);
  }
  RiskCoverage rc = selective_risk_at(conf, losses, artifact.policy.global_tau);
  CHECK_FALSE(rc.zero_coverage);
  CHECK(rc.risk <= 0.05);
}

TEST_CASE("train with a vacuous validation budget answers everything") {
  auto records = training_records(400, 2718);
  RunConfig config = training_config(PolicyMode::validation, 1.0, 5);
  CalibrationArtifact artifact = train(records, config);
  CHECK(artifact.policy.global_tau == doctest::Approx(0.0));
}

TEST_CASE("train is deterministic: identical seeds give byte-identical artifacts") {
  testutil::TempDir dir("train_det");
  auto records = training_records(600, 99);
  RunConfig config = training_config(PolicyMode::conformal, 0.1, 21);
  save_artifact(train(records, config), dir.file("a.json"));
  save_artifact(train(records, config), dir.file("b.json"));
  CHECK(testutil::read_file(dir.file("a.json")) == testutil::read_file(dir.file("b.json")));
  CHECK_FALSE(testutil::read_file(dir.file("a.json")).empty());
}

TEST_CASE("train demands labels on every record") {
  auto records = training_records(100, 1);
  records[17].label.reset();
  RunConfig config = training_config(PolicyMode::conformal, 0.1, 3);
  CHECK_THROWS_AS(train(records, config), Error);
}

TEST_CASE("bucketed training requires the rag family") {
  auto records = training_records(200, 1);
  RunConfig config = training_config(PolicyMode::conformal_bucketed, 0.1, 3);
  config.policy.bucket_edges = {0.5};
  CHECK_THROWS_AS(train(records, config), Error);  // rag family is off
}

TEST_CASE("graded labels train through the soft risk-control path") {
  auto records = training_records(1200, 808);
  // Replace binary labels with a graded factuality surrogate derived from
  // the generator's true probability plus bounded noise.
  Rng rng(11);
  for (auto& r : records) {
    double noisy = std::clamp(*r.debug_true_p + rng.uniform(-0.15, 0.15), 0.0, 1.0);
    r.label = CorrectnessLabel{LabelKind::graded, noisy};
  }
  RunConfig config = training_config(PolicyMode::conformal, 0.1, 17);
  CalibrationArtifact artifact = train(records, config);
  CHECK(artifact.policy.mode == PolicyMode::conformal);
  REQUIRE_FALSE(artifact.policy.abstain_always());

  // The conservative soft bound holds on the calibration split at the
  // selected threshold.
  SplitIndices split = ltt_split(records.size(), 0.6, 0.2, 0.2, config.seed);
  const IsotonicMap* iso = artifact.isotonic.has_value() ? &*artifact.isotonic : nullptr;
  double loss_sum = 0.0;
  std::size_t answered = 0;
  const double m = static_cast<double>(split.calibrate.size());
  for (std::size_t i : split.calibrate) {
    AssembledFeatures f = assemble_features(records[i], artifact.feature_config);
    double c = predict_confidence(artifact.head, iso, f.vec);
    if (c >= artifact.policy.global_tau) {
      ++answered;
      loss_sum += 1.0 - records[i].label->value;
    }
  }
  double coverage = static_cast<double>(answered) / m;
  CHECK((loss_sum + 1.0) / (m + 1.0) <= 0.1 * coverage + 1e-12);
}

TEST_CASE("bucketed training end to end") {
  SyntheticSpec spec = default_simulate_spec().synthetic;
  spec.features.rag = true;  // adds rag_coverage/align/conflict to the schema
  spec.link_weights = {1.2, 1.0, -0.8, 0.6, 0.4, -0.5, 1.5};
  spec.link_bias = 4.2;
  spec.n = 1200;
  spec.seed = 5555;
  auto records = generate_synthetic(spec);

  RunConfig config;
  config.features = spec.features;
  config.seed = 31;
  config.head.seed = 31;
  config.policy.mode = PolicyMode::conformal_bucketed;
  config.policy.alpha_or_rho = 0.1;
  config.policy.bucket_edges = {0.5};
  config.policy.min_bucket_size = 10;

  CalibrationArtifact artifact = train(records, config);
  REQUIRE(artifact.policy.buckets.size() == 2);
  CHECK(artifact.policy.mode == PolicyMode::conformal_bucketed);
  CHECK(artifact.policy.buckets[0].hi == doctest::Approx(0.5));

  // Inference picks the bucket by the record's evidence coverage.
  auto outcome = infer(artifact, records[0]);
  AssembledFeatures f = assemble_features(records[0], artifact.feature_config);
  int cov_idx = schema_index(artifact.feature_config, FeatureId::rag_coverage);
  double tau = artifact.policy.tau_for(f.vec.values[cov_idx]);
  const IsotonicMap* iso = artifact.isotonic.has_value() ? &*artifact.isotonic : nullptr;
  double conf = predict_confidence(artifact.head, iso, f.vec);
  CHECK(outcome.answer == (conf >= tau));

  // Round-trips like any other artifact.
  testutil::TempDir dir("bucketed");
  save_artifact(artifact, dir.file("artifact.json"));
  CalibrationArtifact loaded = load_artifact(dir.file("artifact.json"));
  CHECK(loaded.policy.buckets.size() == 2);
  CHECK(loaded.policy.buckets[0].tau == artifact.policy.buckets[0].tau);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

TEST_CASE("artifact save/load round-trip reproduces every decision") {
  testutil::TempDir dir("roundtrip");
  auto records = training_records(600, 4096);
  RunConfig config = training_config(PolicyMode::conformal, 0.08, 87);
  CalibrationArtifact artifact = train(records, config);
  save_artifact(artifact, dir.file("artifact.json"));
  CalibrationArtifact loaded = load_artifact(dir.file("artifact.json"));

  auto probe = training_records(100, 31337);
  for (const auto& r : probe) {
    auto a = infer(artifact, r);
    auto b = infer(loaded, r);
    CHECK(a.answer == b.answer);
    CHECK(a.confidence == b.confidence);  // bit-identical
    CHECK(a.reason == b.reason);
  }
}

TEST_CASE("corrupted schema hash is rejected at load") {
  testutil::TempDir dir("corrupt");
  auto records = training_records(400, 7);
  CalibrationArtifact artifact = train(records, training_config(PolicyMode::conformal, 0.1, 9));
  save_artifact(artifact, dir.file("artifact.json"));

  auto j = io::read_json_file(dir.file("artifact.json"));
  j["feature_config"]["schema_hash"] = "deadbeefdeadbeef";
  io::write_json_file(dir.file("bad.json"), j);
  CHECK_THROWS_AS(load_artifact(dir.file("bad.json")), Error);

  j = io::read_json_file(dir.file("artifact.json"));
  j["version"] = "unicr-artifact/999";
  io::write_json_file(dir.file("badver.json"), j);
  CHECK_THROWS_AS(load_artifact(dir.file("badver.json")), Error);
}

TEST_CASE("policy mode guard rejects replays under a different mode") {
  testutil::TempDir dir("modeguard");
  auto records = training_records(400, 7);
  CalibrationArtifact artifact =
      train(records, training_config(PolicyMode::validation, 0.2, 9));
  save_artifact(artifact, dir.file("artifact.json"));
  CHECK_NOTHROW(load_artifact(dir.file("artifact.json"), PolicyMode::validation));
  CHECK_THROWS_AS(load_artifact(dir.file("artifact.json"), PolicyMode::conformal), Error);
}
