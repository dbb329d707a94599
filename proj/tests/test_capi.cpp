// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors
//
// Exercises the shared-library surface in unicr/unicr.h. Fixture files are
// produced with the core library; every operation under test goes through
// the C API.

#include "unicr/unicr.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <doctest.h>
#include <json.hpp>

#include "unicr/eval.hpp"
#include "unicr/io.hpp"
#include "unicr/metrics.hpp"
#include "unicr/rng.hpp"
#include "unicr/pipeline.hpp"
#include "unicr/simulate.hpp"
#include "test_util.hpp"

using json = nlohmann::json;

namespace {

std::string records_fixture(const testutil::TempDir& dir, int n, std::uint64_t seed) {
  unicr::SyntheticSpec spec = unicr::default_simulate_spec().synthetic;
  spec.n = n;
  spec.seed = seed;
  std::string path = dir.file("records.jsonl");
  unicr::io::write_records_jsonl(path, unicr::generate_synthetic(spec));
  return path;
}

// Run config whose feature block matches the synthetic fixture records.
std::string train_config() {
  json config;
  config["seed"] = 5;
  config["features"] =
      unicr::io::feature_config_to_json(unicr::default_simulate_spec().synthetic.features);
  config["policy"] = json{{"mode", "conformal"}, {"alpha", 0.05}};
  return config.dump();
}

}  // namespace

TEST_CASE("version and last_error are always available") {
  CHECK(unicr_version() != nullptr);
  CHECK(unicr_last_error() != nullptr);
}

TEST_CASE("extract via the C API") {
  testutil::TempDir dir("capi_extract");
  std::string records = records_fixture(dir, 50, 1);
  std::string out = dir.file("features.jsonl");

  CHECK(unicr_extract(records.c_str(), train_config().c_str(), out.c_str()) == UNICR_OK);
  std::string body = testutil::read_file(out);
  CHECK(std::count(body.begin(), body.end(), '\n') == 50);
  auto meta = unicr::io::read_json_file(out + ".meta.json");
  CHECK(meta.at("count").get<int>() == 50);
  CHECK(meta.at("schema").size() == 4);

  SUBCASE("unknown config keys are a config error") {
    CHECK(unicr_extract(records.c_str(), R"({"bogus": 1})", out.c_str()) ==
          UNICR_CONFIG_ERROR);
    CHECK(std::string(unicr_last_error()).find("bogus") != std::string::npos);
  }
  SUBCASE("wrongly typed config values are a config error, not internal") {
    CHECK(unicr_extract(records.c_str(), R"({"seed": "not-a-number"})", out.c_str()) ==
          UNICR_CONFIG_ERROR);
    CHECK(unicr_extract(records.c_str(), R"(["not an object"])", out.c_str()) ==
          UNICR_CONFIG_ERROR);
  }
  SUBCASE("malformed records are a data error") {
    std::string bad = dir.file("bad.jsonl");
    testutil::write_file(bad, "{\"id\":\"x\"}\nnot-json\n");
    CHECK(unicr_extract(bad.c_str(), train_config().c_str(), out.c_str()) == UNICR_DATA_ERROR);
    CHECK(std::string(unicr_last_error()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("train, open, info, infer through the C API") {
  testutil::TempDir dir("capi_train");
  std::string records = records_fixture(dir, 600, 2);
  std::string artifact_path = dir.file("artifact.json");

  REQUIRE(unicr_train(records.c_str(), train_config().c_str(), artifact_path.c_str()) == UNICR_OK);

  unicr_artifact* artifact = nullptr;
  REQUIRE(unicr_artifact_open(artifact_path.c_str(), "conformal", &artifact) == UNICR_OK);

  char* info = nullptr;
  REQUIRE(unicr_artifact_info(artifact, &info) == UNICR_OK);
  auto parsed = json::parse(info);
  unicr_free(info);
  CHECK(parsed.at("mode") == "conformal");
  CHECK(parsed.at("schema").size() == 4);

  std::string decisions = dir.file("decisions.jsonl");
  REQUIRE(unicr_infer_file(artifact, records.c_str(), decisions.c_str()) == UNICR_OK);
  std::string body = testutil::read_file(decisions);
  CHECK(std::count(body.begin(), body.end(), '\n') == 600);
  // Lines carry exactly the decision schema.
  auto first = json::parse(body.substr(0, body.find('\n')));
  CHECK(first.contains("id"));
  CHECK(first.contains("decision"));
  CHECK(first.contains("confidence"));
  CHECK(first.contains("reason"));
  CHECK(first.contains("retried"));

  SUBCASE("mode guard") {
    unicr_artifact* wrong = nullptr;
    CHECK(unicr_artifact_open(artifact_path.c_str(), "validation", &wrong) ==
          UNICR_DATA_ERROR);
    CHECK(wrong == nullptr);
  }
  unicr_artifact_close(artifact);
}

namespace {

// Refresh hook handing back a record with stronger evidence; counts calls.
struct RefreshState {
  int calls = 0;
  std::string replacement;
};

int refresh_hook(const char* record_json, char** refreshed_json, void* user_data) {
  auto* state = static_cast<RefreshState*>(user_data);
  ++state->calls;
  (void)record_json;
  *refreshed_json = static_cast<char*>(std::malloc(state->replacement.size() + 1));
  std::memcpy(*refreshed_json, state->replacement.c_str(), state->replacement.size() + 1);
  return 0;
}

int failing_hook(const char*, char**, void*) { return 1; }

// Artifact whose confidence tracks sc_agree and tool_diag only; mirrors the
// trace artifact in the pipeline tests.
std::string write_trace_artifact(const testutil::TempDir& dir) {
  unicr::CalibrationArtifact a;
  a.feature_config.seq = false;
  a.feature_config.entropy = false;
  a.feature_config.sc = true;
  a.feature_config.entailment = false;
  a.feature_config.rag = true;
  a.feature_config.verifier = true;
  a.feature_config.tool = true;
  a.head.kind = unicr::HeadKind::logistic;
  a.head.d = 8;
  a.head.weights = {3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0, -4.0};
  a.head.schema_hash = a.feature_config.schema_hash();
  a.policy.mode = unicr::PolicyMode::validation;
  a.policy.global_tau = 0.42;
  a.policy.alpha_or_rho = 0.3;
  a.policy.calibration_size = 10;
  a.feature_stats.mean.assign(8, 0.5);
  a.feature_stats.stddev.assign(8, 1.0);
  std::string path = dir.file("trace_artifact.json");
  unicr::save_artifact(a, path);
  return path;
}

json trace_record_json(double tool, double coverage) {
  json samples = json::array();
  for (const char* key : {"A", "B", "C"})
    samples.push_back(json{{"answer_key", key}, {"verifier_pass", true}});
  json claims = json::array();
  int supported = static_cast<int>(coverage * 10.0 + 0.5);
  for (int i = 0; i < 10; ++i)
    claims.push_back(json{{"entailment", 0.8},
                          {"contradicted", false},
                          {"salient", true},
                          {"max_passage_entailment", i < supported ? 0.9 : 0.1},
                          {"contradiction_score", 0.0}});
  return json{{"id", "probe"},
              {"samples", samples},
              {"claims", claims},
              {"tool_diag", tool},
              {"verifier_flags", json::array({json{{"pass", true}}})}};
}

}  // namespace

TEST_CASE("single-record decide with the retrieval refresh hook") {
  testutil::TempDir dir("capi_decide");
  std::string path = write_trace_artifact(dir);
  unicr_artifact* artifact = nullptr;
  REQUIRE(unicr_artifact_open(path.c_str(), nullptr, &artifact) == UNICR_OK);

  // First pass lands just under threshold with low coverage: the hook runs.
  RefreshState state;
  state.replacement = trace_record_json(0.75, 0.9).dump();
  std::string record = trace_record_json(0.62, 0.1).dump();

  char* decision = nullptr;
  REQUIRE(unicr_decide(artifact, record.c_str(), refresh_hook, &state, &decision) ==
          UNICR_OK);
  auto parsed = json::parse(decision);
  unicr_free(decision);
  CHECK(state.calls == 1);
  CHECK(parsed.at("decision") == "answer");
  CHECK(parsed.at("retried") == true);

  SUBCASE("hook failure becomes a tool_failure abstention") {
    char* out = nullptr;
    REQUIRE(unicr_decide(artifact, record.c_str(), failing_hook, nullptr, &out) == UNICR_OK);
    auto failed = json::parse(out);
    unicr_free(out);
    CHECK(failed.at("decision") == "abstain");
    CHECK(failed.at("reason") == "tool_failure");
    CHECK(failed.at("retried") == false);
    CHECK(failed.contains("message"));
  }
  SUBCASE("no hook means no retry") {
    char* out = nullptr;
    REQUIRE(unicr_decide(artifact, record.c_str(), nullptr, nullptr, &out) == UNICR_OK);
    auto no_retry = json::parse(out);
    unicr_free(out);
    CHECK(no_retry.at("decision") == "abstain");
    CHECK(no_retry.at("retried") == false);
  }
  unicr_artifact_close(artifact);
}

TEST_CASE("unsatisfiable training budget returns status 4 but writes the artifact") {
  testutil::TempDir dir("capi_unsat");
  // Every record wrong: a zero validation budget cannot be met.
  std::string lines;
  for (int i = 0; i < 120; ++i) {
    lines += json{{"id", "r" + std::to_string(i)},
                  {"tool_diag", 0.4 + 0.001 * i},
                  {"label", json{{"kind", "exact"}, {"value", 0.0}}}}
                 .dump();
    lines += '\n';
  }
  std::string records = dir.file("records.jsonl");
  testutil::write_file(records, lines);
  const char* config =
      R"({"seed": 3, "features": {"seq": false, "entropy": false, "sc": false, "rag": false, "tool": true},
          "policy": {"mode": "validation", "rho": 0.0}})";
  std::string artifact_path = dir.file("artifact.json");
  CHECK(unicr_train(records.c_str(), config, artifact_path.c_str()) == UNICR_UNSATISFIABLE);
  CHECK_FALSE(testutil::read_file(artifact_path).empty());

  unicr_artifact* artifact = nullptr;
  REQUIRE(unicr_artifact_open(artifact_path.c_str(), nullptr, &artifact) == UNICR_OK);
  std::string decisions = dir.file("decisions.jsonl");
  REQUIRE(unicr_infer_file(artifact, records.c_str(), decisions.c_str()) == UNICR_OK);
  // Abstain-always policy: every decision is an abstention.
  std::istringstream in(testutil::read_file(decisions));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) CHECK(json::parse(line).at("decision") == "abstain");
  unicr_artifact_close(artifact);
}

TEST_CASE("eval via the C API") {
  testutil::TempDir dir("capi_eval");
  // Pairs mode with perfect predictions: everything right at high confidence.
  std::string pairs = dir.file("pairs.jsonl");
  std::string lines;
  for (int i = 0; i < 40; ++i)
    lines += json{{"confidence", 1.0}, {"label", 1.0}}.dump() + "\n";
  testutil::write_file(pairs, lines);
  json flags{{"pairs", pairs}, {"risk_budget", 0.05}};
  REQUIRE(unicr_eval(flags.dump().c_str(), dir.path().string().c_str()) == UNICR_OK);
  auto summary = unicr::io::read_json_file(dir.file("summary.json"));
  CHECK(summary.at("ece").get<double>() == doctest::Approx(0.0).epsilon(1e-4));
  CHECK(summary.at("aurc").get<double>() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(summary.at("coverage_at_risk").get<double>() == doctest::Approx(1.0));
  CHECK_FALSE(testutil::read_file(dir.file("rc_curve.csv")).empty());
  CHECK_FALSE(testutil::read_file(dir.file("reliability.csv")).empty());

  SUBCASE("missing labels are an error") {
    json bad{{"decisions", pairs}};
    CHECK(unicr_eval(bad.dump().c_str(), dir.path().string().c_str()) == UNICR_CONFIG_ERROR);
  }

  SUBCASE("summary matches library-level metric values exactly") {
    unicr::Rng rng(64);
    std::vector<double> conf, labels;
    std::string mixed_lines;
    for (int i = 0; i < 200; ++i) {
      conf.push_back(rng.uniform());
      labels.push_back(rng.bernoulli(0.5 + 0.4 * conf.back()) ? 1.0 : 0.0);
      mixed_lines +=
          json{{"confidence", conf.back()}, {"label", labels.back()}}.dump() + "\n";
    }
    std::string mixed = dir.file("mixed.jsonl");
    testutil::write_file(mixed, mixed_lines);
    json mixed_flags{{"pairs", mixed}, {"risk_budget", 0.1}};
    REQUIRE(unicr_eval(mixed_flags.dump().c_str(), dir.path().string().c_str()) == UNICR_OK);
    auto s = unicr::io::read_json_file(dir.file("summary.json"));
    auto curve = unicr::rc_curve(conf, labels);
    CHECK(s.at("ece").get<double>() ==
          unicr::ece(conf, labels, unicr::EceScheme::fixed15));
    CHECK(s.at("brier").get<double>() == unicr::brier(conf, labels));
    CHECK(s.at("nll").get<double>() == unicr::nll(conf, labels));
    CHECK(s.at("aurc").get<double>() == unicr::aurc(curve));
    CHECK(s.at("coverage_at_risk").get<double>() == unicr::coverage_at_risk(curve, 0.1));
  }
}

TEST_CASE("extract on empty input writes empty output") {
  testutil::TempDir dir("capi_empty");
  std::string records = dir.file("empty.jsonl");
  testutil::write_file(records, "");
  std::string out = dir.file("features.jsonl");
  CHECK(unicr_extract(records.c_str(), train_config().c_str(), out.c_str()) == UNICR_OK);
  CHECK(testutil::read_file(out).empty());
  auto meta = unicr::io::read_json_file(out + ".meta.json");
  CHECK(meta.at("count").get<int>() == 0);
}

TEST_CASE("simulate via the C API is deterministic") {
  testutil::TempDir dir("capi_sim");
  json spec{{"trials", 25}, {"calib_size", 200}, {"test_size", 200}, {"train_size", 800},
            {"seed", 99}};
  std::string r1 = dir.file("report1.json"), r2 = dir.file("report2.json");
  REQUIRE(unicr_simulate(spec.dump().c_str(), r1.c_str()) == UNICR_OK);
  REQUIRE(unicr_simulate(spec.dump().c_str(), r2.c_str()) == UNICR_OK);
  auto a = unicr::io::read_json_file(r1);
  auto b = unicr::io::read_json_file(r2);
  CHECK(a.at("violation_rate") == b.at("violation_rate"));
  CHECK(a.at("mean_risk") == b.at("mean_risk"));
  CHECK(a.at("trials").get<int>() == 25);
}
