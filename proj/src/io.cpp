// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "unicr/error.hpp"

namespace unicr::io {

namespace {

void check_keys(const json& j, const char* what,
                std::initializer_list<const char*> allowed, ErrorCode code) {
  if (!j.is_object()) throw Error(code, std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw Error(code, std::string(what) + ": unknown key \"" + it.key() + "\"");
  }
}

double get_number(const json& j, const char* what) {
  if (!j.is_number()) throw Error(ErrorCode::data_error, std::string(what) + " must be a number");
  return j.get<double>();
}

double get_unit(const json& j, const char* what) {
  double v = get_number(j, what);
  if (!(v >= 0.0 && v <= 1.0))
    throw Error(ErrorCode::data_error, std::string(what) + " must lie in [0,1]");
  return v;
}

std::vector<double> get_number_array(const json& j, const char* what) {
  if (!j.is_array()) throw Error(ErrorCode::data_error, std::string(what) + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(get_number(e, what));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

namespace {

CorrectnessLabel label_from_json(const json& j) {
  check_keys(j, "label", {"kind", "value"}, ErrorCode::data_error);
  if (!j.contains("kind") || !j.contains("value"))
    throw Error(ErrorCode::data_error, "label needs kind and value");
  CorrectnessLabel label;
  label.kind = label_kind_from_string(j.at("kind").get<std::string>());
  label.value = get_number(j.at("value"), "label.value");
  if (label.is_binary()) {
    if (label.value != 0.0 && label.value != 1.0)
      throw Error(ErrorCode::data_error, "exact/executed label value must be 0 or 1");
  } else if (!(label.value >= 0.0 && label.value <= 1.0)) {
    throw Error(ErrorCode::data_error, "graded label value must lie in [0,1]");
  }
  return label;
}

json label_to_json(const CorrectnessLabel& label) {
  return json{{"kind", to_string(label.kind)}, {"value", label.value}};
}

std::vector<double> pairwise_row(const json& j, const char* what, std::size_t k,
                                 std::size_t self_index) {
  std::vector<double> row = get_number_array(j, what);
  if (row.size() != k)
    throw Error(ErrorCode::data_error,
                std::string(what) + " row length must equal the sample count");
  for (double v : row)
    if (!(v >= 0.0 && v <= 1.0))
      throw Error(ErrorCode::data_error, std::string(what) + " entries must lie in [0,1]");
  if (std::fabs(row[self_index] - 1.0) > 1e-6)
    throw Error(ErrorCode::data_error, std::string(what) + " self-entry must be 1");
  return row;
}

SampleRecord sample_from_json(const json& j) {
  check_keys(j, "sample",
             {"answer_key", "embedding_sim", "entailment_pairs", "verifier_pass"},
             ErrorCode::data_error);
  SampleRecord s;
  if (!j.contains("answer_key") || !j.at("answer_key").is_string())
    throw Error(ErrorCode::data_error, "sample needs a string answer_key");
  s.answer_key = j.at("answer_key").get<std::string>();
  if (j.contains("verifier_pass")) {
    if (!j.at("verifier_pass").is_boolean())
      throw Error(ErrorCode::data_error, "verifier_pass must be boolean");
    s.verifier_pass = j.at("verifier_pass").get<bool>();
  }
  return s;  // pairwise rows are validated against K by the caller
}

ClaimScore claim_from_json(const json& j) {
  check_keys(j, "claim",
             {"entailment", "contradicted", "salient", "max_passage_entailment",
              "contradiction_score"},
             ErrorCode::data_error);
  for (const char* k :
       {"entailment", "contradicted", "salient", "max_passage_entailment",
        "contradiction_score"})
    if (!j.contains(k))
      throw Error(ErrorCode::data_error, std::string("claim needs key \"") + k + "\"");
  ClaimScore c;
  c.entailment = get_unit(j.at("entailment"), "claim.entailment");
  if (!j.at("contradicted").is_boolean() || !j.at("salient").is_boolean())
    throw Error(ErrorCode::data_error, "claim contradicted/salient must be boolean");
  c.contradicted = j.at("contradicted").get<bool>();
  c.salient = j.at("salient").get<bool>();
  c.max_passage_entailment =
      get_unit(j.at("max_passage_entailment"), "claim.max_passage_entailment");
  c.contradiction_score = get_unit(j.at("contradiction_score"), "claim.contradiction_score");
  return c;
}

}  // namespace

RawSignalsRecord record_from_json(const json& j) {
  check_keys(j, "record",
             {"id", "token_logprobs", "token_entropies", "samples", "claims",
              "verifier_flags", "tool_diag", "label", "bucket_hint", "debug_true_p"},
             ErrorCode::data_error);
  RawSignalsRecord r;
  if (!j.contains("id") || !j.at("id").is_string())
    throw Error(ErrorCode::data_error, "record needs a string id");
  r.id = j.at("id").get<std::string>();

  if (j.contains("token_logprobs")) {
    auto lp = get_number_array(j.at("token_logprobs"), "token_logprobs");
    for (double v : lp)
      if (!(v <= 0.0) || !std::isfinite(v))
        throw Error(ErrorCode::data_error, "token_logprobs entries must be finite and <= 0");
    r.token_logprobs = std::move(lp);
  }
  if (j.contains("token_entropies")) {
    auto te = get_number_array(j.at("token_entropies"), "token_entropies");
    for (double v : te)
      if (!(v >= 0.0) || !std::isfinite(v))
        throw Error(ErrorCode::data_error, "token_entropies entries must be finite and >= 0");
    r.token_entropies = std::move(te);
  }
  if (j.contains("samples")) {
    const json& arr = j.at("samples");
    if (!arr.is_array()) throw Error(ErrorCode::data_error, "samples must be an array");
    const std::size_t k = arr.size();
    for (std::size_t i = 0; i < k; ++i) {
      SampleRecord s = sample_from_json(arr[i]);
      if (arr[i].contains("embedding_sim"))
        s.embedding_sim = pairwise_row(arr[i].at("embedding_sim"), "embedding_sim", k, i);
      if (arr[i].contains("entailment_pairs"))
        s.entailment_pairs =
            pairwise_row(arr[i].at("entailment_pairs"), "entailment_pairs", k, i);
      r.samples.push_back(std::move(s));
    }
  }
  if (j.contains("claims")) {
    const json& arr = j.at("claims");
    if (!arr.is_array()) throw Error(ErrorCode::data_error, "claims must be an array");
    for (const auto& c : arr) r.claims.push_back(claim_from_json(c));
  }
  if (j.contains("verifier_flags")) {
    const json& arr = j.at("verifier_flags");
    if (!arr.is_array()) throw Error(ErrorCode::data_error, "verifier_flags must be an array");
    std::vector<VerifierFlag> flags;
    for (const auto& f : arr) {
      check_keys(f, "verifier_flag", {"pass", "score"}, ErrorCode::data_error);
      if (!f.contains("pass") || !f.at("pass").is_boolean())
        throw Error(ErrorCode::data_error, "verifier_flag needs a boolean pass");
      VerifierFlag vf;
      vf.pass = f.at("pass").get<bool>();
      if (f.contains("score")) vf.score = get_unit(f.at("score"), "verifier_flag.score");
      flags.push_back(vf);
    }
    r.verifier_flags = std::move(flags);
  }
  if (j.contains("tool_diag")) r.tool_diag = get_unit(j.at("tool_diag"), "tool_diag");
  if (j.contains("label")) r.label = label_from_json(j.at("label"));
  if (j.contains("bucket_hint")) {
    if (!j.at("bucket_hint").is_string())
      throw Error(ErrorCode::data_error, "bucket_hint must be a string");
    r.bucket_hint = j.at("bucket_hint").get<std::string>();
  }
  if (j.contains("debug_true_p"))
    r.debug_true_p = get_unit(j.at("debug_true_p"), "debug_true_p");
  return r;
}

json record_to_json(const RawSignalsRecord& r, bool include_debug) {
  json j;
  j["id"] = r.id;
  if (r.token_logprobs.has_value()) j["token_logprobs"] = *r.token_logprobs;
  if (r.token_entropies.has_value()) j["token_entropies"] = *r.token_entropies;
  if (!r.samples.empty()) {
    json arr = json::array();
    for (const auto& s : r.samples) {
      json sj;
      sj["answer_key"] = s.answer_key;
      if (s.embedding_sim.has_value()) sj["embedding_sim"] = *s.embedding_sim;
      if (s.entailment_pairs.has_value()) sj["entailment_pairs"] = *s.entailment_pairs;
      if (s.verifier_pass.has_value()) sj["verifier_pass"] = *s.verifier_pass;
      arr.push_back(std::move(sj));
    }
    j["samples"] = std::move(arr);
  }
  if (!r.claims.empty()) {
    json arr = json::array();
    for (const auto& c : r.claims) {
      arr.push_back(json{{"entailment", c.entailment},
                         {"contradicted", c.contradicted},
                         {"salient", c.salient},
                         {"max_passage_entailment", c.max_passage_entailment},
                         {"contradiction_score", c.contradiction_score}});
    }
    j["claims"] = std::move(arr);
  }
  if (r.verifier_flags.has_value()) {
    json arr = json::array();
    for (const auto& f : *r.verifier_flags) {
      json fj{{"pass", f.pass}};
      if (f.score.has_value()) fj["score"] = *f.score;
      arr.push_back(std::move(fj));
    }
    j["verifier_flags"] = std::move(arr);
  }
  if (r.tool_diag.has_value()) j["tool_diag"] = *r.tool_diag;
  if (r.label.has_value()) j["label"] = label_to_json(*r.label);
  if (r.bucket_hint.has_value()) j["bucket_hint"] = *r.bucket_hint;
  if (include_debug && r.debug_true_p.has_value()) j["debug_true_p"] = *r.debug_true_p;
  return j;
}

std::vector<RawSignalsRecord> read_records_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open records file " + path);
  std::vector<RawSignalsRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::data_error,
                  path + " line " + std::to_string(line_no) + ": malformed JSON");
    }
    try {
      out.push_back(record_from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), path + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::data_error,
                  path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_records_jsonl(const std::string& path,
                         const std::vector<RawSignalsRecord>& records,
                         bool include_debug) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp);
    for (const auto& r : records) out << record_to_json(r, include_debug).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

FeatureConfig feature_config_from_json(const json& j) {
  check_keys(j, "features",
             {"seq", "entropy", "sc", "entailment", "rag", "verifier", "tool",
              "link_threshold", "support_threshold", "conflict_threshold",
              "reference_pool", "d_min", "d_max"},
             ErrorCode::config_error);
  FeatureConfig c;
  auto get_bool = [&](const char* key, bool& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_boolean())
      throw Error(ErrorCode::config_error, std::string("features.") + key + " must be boolean");
    out = j.at(key).get<bool>();
  };
  get_bool("seq", c.seq);
  get_bool("entropy", c.entropy);
  get_bool("sc", c.sc);
  get_bool("entailment", c.entailment);
  get_bool("rag", c.rag);
  get_bool("verifier", c.verifier);
  get_bool("tool", c.tool);
  if (j.contains("link_threshold")) c.link_threshold = get_number(j.at("link_threshold"), "link_threshold");
  if (j.contains("support_threshold"))
    c.support_threshold = get_number(j.at("support_threshold"), "support_threshold");
  if (j.contains("conflict_threshold"))
    c.conflict_threshold = get_number(j.at("conflict_threshold"), "conflict_threshold");
  if (j.contains("reference_pool"))
    c.reference_pool = get_number_array(j.at("reference_pool"), "reference_pool");
  if (j.contains("d_min")) c.d_min = j.at("d_min").get<int>();
  if (j.contains("d_max")) c.d_max = j.at("d_max").get<int>();
  return c;
}

json feature_config_to_json(const FeatureConfig& c) {
  json j;
  j["seq"] = c.seq;
  j["entropy"] = c.entropy;
  j["sc"] = c.sc;
  j["entailment"] = c.entailment;
  j["rag"] = c.rag;
  j["verifier"] = c.verifier;
  j["tool"] = c.tool;
  j["link_threshold"] = c.link_threshold;
  j["support_threshold"] = c.support_threshold;
  j["conflict_threshold"] = c.conflict_threshold;
  j["reference_pool"] = c.reference_pool;
  j["d_min"] = c.d_min;
  j["d_max"] = c.d_max;
  return j;
}

namespace {

HeadFitConfig head_config_from_json(const json& j, std::uint64_t run_seed) {
  check_keys(j, "head",
             {"kind", "hidden", "alpha", "l2_lambda", "seed", "max_iters", "grad_tol",
              "temperature", "selective", "coverage_smoothing", "early_stopping"},
             ErrorCode::config_error);
  HeadFitConfig c;
  c.seed = static_cast<std::int64_t>(run_seed);
  if (j.contains("kind")) c.kind = head_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<int>();
  if (j.contains("alpha")) c.alpha = get_number(j.at("alpha"), "head.alpha");
  if (j.contains("l2_lambda")) c.l2_lambda = get_number(j.at("l2_lambda"), "head.l2_lambda");
  if (j.contains("seed")) c.seed = j.at("seed").get<std::int64_t>();
  if (j.contains("max_iters")) c.max_iters = j.at("max_iters").get<int>();
  if (j.contains("grad_tol")) c.grad_tol = get_number(j.at("grad_tol"), "head.grad_tol");
  if (j.contains("temperature")) {
    if (!j.at("temperature").is_boolean())
      throw Error(ErrorCode::config_error, "head.temperature must be boolean");
    c.temperature_enabled = j.at("temperature").get<bool>();
  }
  if (j.contains("early_stopping")) {
    if (!j.at("early_stopping").is_boolean())
      throw Error(ErrorCode::config_error, "head.early_stopping must be boolean");
    c.early_stopping = j.at("early_stopping").get<bool>();
  }
  if (j.contains("selective")) {
    const json& s = j.at("selective");
    check_keys(s, "head.selective", {"enabled", "beta", "kappa", "rho", "soft_width"},
               ErrorCode::config_error);
    if (s.contains("enabled")) c.selective_enabled = s.at("enabled").get<bool>();
    if (s.contains("beta")) c.beta = get_number(s.at("beta"), "selective.beta");
    if (s.contains("kappa")) c.kappa = get_number(s.at("kappa"), "selective.kappa");
    if (s.contains("rho")) c.rho = get_number(s.at("rho"), "selective.rho");
    if (s.contains("soft_width"))
      c.selective_soft_width = get_number(s.at("soft_width"), "selective.soft_width");
  }
  if (j.contains("coverage_smoothing")) {
    const json& s = j.at("coverage_smoothing");
    check_keys(s, "head.coverage_smoothing", {"enabled", "delta", "weight"},
               ErrorCode::config_error);
    if (s.contains("enabled")) c.coverage_smoothing_enabled = s.at("enabled").get<bool>();
    if (s.contains("delta")) c.smoothing_delta = get_number(s.at("delta"), "smoothing.delta");
    if (s.contains("weight"))
      c.smoothing_weight = get_number(s.at("weight"), "smoothing.weight");
  }
  return c;
}

json head_config_to_json(const HeadFitConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  j["hidden"] = c.hidden;
  j["alpha"] = c.alpha;
  j["l2_lambda"] = c.l2_lambda;
  j["seed"] = c.seed;
  j["max_iters"] = c.max_iters;
  j["grad_tol"] = c.grad_tol;
  j["temperature"] = c.temperature_enabled;
  j["early_stopping"] = c.early_stopping;
  j["selective"] = json{{"enabled", c.selective_enabled},
                        {"beta", c.beta},
                        {"kappa", c.kappa},
                        {"rho", c.rho},
                        {"soft_width", c.selective_soft_width}};
  j["coverage_smoothing"] = json{{"enabled", c.coverage_smoothing_enabled},
                                 {"delta", c.smoothing_delta},
                                 {"weight", c.smoothing_weight}};
  return j;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "config",
             {"features", "head", "policy", "decision", "split", "seed", "isotonic"},
             ErrorCode::config_error);
  RunConfig c;
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("features")) c.features = feature_config_from_json(j.at("features"));
  if (j.contains("head")) c.head = head_config_from_json(j.at("head"), c.seed);
  else c.head.seed = static_cast<std::int64_t>(c.seed);
  if (j.contains("policy")) {
    const json& p = j.at("policy");
    check_keys(p, "policy",
               {"mode", "alpha", "rho", "alpha_or_rho", "bucket_edges", "smoothing",
                "min_bucket_size"},
               ErrorCode::config_error);
    if (p.contains("mode"))
      c.policy.mode = policy_mode_from_string(p.at("mode").get<std::string>());
    int budget_keys = 0;
    for (const char* k : {"alpha", "rho", "alpha_or_rho"})
      if (p.contains(k)) ++budget_keys;
    if (budget_keys > 1)
      throw Error(ErrorCode::config_error, "policy: give exactly one of alpha/rho/alpha_or_rho");
    for (const char* k : {"alpha", "rho", "alpha_or_rho"})
      if (p.contains(k)) c.policy.alpha_or_rho = get_number(p.at(k), "policy budget");
    if (p.contains("bucket_edges"))
      c.policy.bucket_edges = get_number_array(p.at("bucket_edges"), "bucket_edges");
    if (p.contains("smoothing"))
      c.policy.smoothing = smoothing_from_string(p.at("smoothing").get<std::string>());
    if (p.contains("min_bucket_size"))
      c.policy.min_bucket_size = p.at("min_bucket_size").get<int>();
  }
  if (j.contains("decision")) {
    const json& d = j.at("decision");
    check_keys(d, "decision",
               {"retry_margin", "retry_coverage_threshold", "reason_coverage_threshold",
                "reason_dispersion_threshold", "reason_tool_threshold",
                "reason_verifier_threshold"},
               ErrorCode::config_error);
    auto get = [&](const char* k, double& out) {
      if (d.contains(k)) out = get_number(d.at(k), k);
    };
    get("retry_margin", c.decision.retry_margin);
    get("retry_coverage_threshold", c.decision.retry_coverage_threshold);
    get("reason_coverage_threshold", c.decision.reason_coverage_threshold);
    get("reason_dispersion_threshold", c.decision.reason_dispersion_threshold);
    get("reason_tool_threshold", c.decision.reason_tool_threshold);
    get("reason_verifier_threshold", c.decision.reason_verifier_threshold);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    check_keys(s, "split", {"train", "tune", "calibrate"}, ErrorCode::config_error);
    if (s.contains("train")) c.split.train = get_number(s.at("train"), "split.train");
    if (s.contains("tune")) c.split.tune = get_number(s.at("tune"), "split.tune");
    if (s.contains("calibrate"))
      c.split.calibrate = get_number(s.at("calibrate"), "split.calibrate");
  }
  if (j.contains("isotonic")) {
    if (!j.at("isotonic").is_boolean())
      throw Error(ErrorCode::config_error, "isotonic must be boolean");
    c.isotonic = j.at("isotonic").get<bool>();
    c.isotonic_explicit = true;
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["features"] = feature_config_to_json(c.features);
  j["head"] = head_config_to_json(c.head);
  j["policy"] = json{{"mode", to_string(c.policy.mode)},
                     {"alpha_or_rho", c.policy.alpha_or_rho},
                     {"bucket_edges", c.policy.bucket_edges},
                     {"smoothing", to_string(c.policy.smoothing)},
                     {"min_bucket_size", c.policy.min_bucket_size}};
  j["decision"] = json{{"retry_margin", c.decision.retry_margin},
                       {"retry_coverage_threshold", c.decision.retry_coverage_threshold},
                       {"reason_coverage_threshold", c.decision.reason_coverage_threshold},
                       {"reason_dispersion_threshold", c.decision.reason_dispersion_threshold},
                       {"reason_tool_threshold", c.decision.reason_tool_threshold},
                       {"reason_verifier_threshold", c.decision.reason_verifier_threshold}};
  j["split"] = json{{"train", c.split.train},
                    {"tune", c.split.tune},
                    {"calibrate", c.split.calibrate}};
  if (c.isotonic_explicit) j["isotonic"] = c.isotonic;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  check_keys(j, "synthetic",
             {"n", "seed", "k_samples", "features", "link", "shift", "skill_mean",
              "loglik_mean", "loglik_skill", "loglik_sd", "tokens_min", "tokens_max",
              "entropy_mean", "entropy_skill", "entropy_sd", "agree_gate", "agree_bias",
              "tool_mid", "tool_skill", "tool_noise", "claim_support_mid",
              "claim_support_skill", "claims_min", "claims_max"},
             ErrorCode::config_error);
  SyntheticSpec s;
  if (j.contains("n")) s.n = j.at("n").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("k_samples")) s.k_samples = j.at("k_samples").get<int>();
  if (j.contains("features")) s.features = feature_config_from_json(j.at("features"));
  if (j.contains("link")) {
    const json& l = j.at("link");
    check_keys(l, "link", {"weights", "bias"}, ErrorCode::config_error);
    if (l.contains("weights")) s.link_weights = get_number_array(l.at("weights"), "link.weights");
    if (l.contains("bias")) s.link_bias = get_number(l.at("bias"), "link.bias");
  }
  if (j.contains("shift") && !j.at("shift").is_null()) {
    const json& sh = j.at("shift");
    check_keys(sh, "shift", {"kind", "magnitude"}, ErrorCode::config_error);
    SyntheticShift shift;
    if (sh.contains("kind")) shift.kind = shift_kind_from_string(sh.at("kind").get<std::string>());
    if (sh.contains("magnitude")) shift.magnitude = get_number(sh.at("magnitude"), "shift.magnitude");
    s.shift = shift;
  }
  auto getd = [&](const char* k, double& out) {
    if (j.contains(k)) out = get_number(j.at(k), k);
  };
  auto geti = [&](const char* k, int& out) {
    if (j.contains(k)) out = j.at(k).get<int>();
  };
  getd("skill_mean", s.skill_mean);
  getd("loglik_mean", s.loglik_mean);
  getd("loglik_skill", s.loglik_skill);
  getd("loglik_sd", s.loglik_sd);
  geti("tokens_min", s.tokens_min);
  geti("tokens_max", s.tokens_max);
  getd("entropy_mean", s.entropy_mean);
  getd("entropy_skill", s.entropy_skill);
  getd("entropy_sd", s.entropy_sd);
  getd("agree_gate", s.agree_gate);
  getd("agree_bias", s.agree_bias);
  getd("tool_mid", s.tool_mid);
  getd("tool_skill", s.tool_skill);
  getd("tool_noise", s.tool_noise);
  getd("claim_support_mid", s.claim_support_mid);
  getd("claim_support_skill", s.claim_support_skill);
  geti("claims_min", s.claims_min);
  geti("claims_max", s.claims_max);
  return s;
}

json synthetic_spec_to_json(const SyntheticSpec& s) {
  json j;
  j["n"] = s.n;
  j["seed"] = s.seed;
  j["k_samples"] = s.k_samples;
  j["features"] = feature_config_to_json(s.features);
  j["link"] = json{{"weights", s.link_weights}, {"bias", s.link_bias}};
  if (s.shift.has_value())
    j["shift"] = json{{"kind", to_string(s.shift->kind)}, {"magnitude", s.shift->magnitude}};
  else
    j["shift"] = nullptr;
  j["skill_mean"] = s.skill_mean;
  j["loglik_mean"] = s.loglik_mean;
  j["loglik_skill"] = s.loglik_skill;
  j["loglik_sd"] = s.loglik_sd;
  j["tokens_min"] = s.tokens_min;
  j["tokens_max"] = s.tokens_max;
  j["entropy_mean"] = s.entropy_mean;
  j["entropy_skill"] = s.entropy_skill;
  j["entropy_sd"] = s.entropy_sd;
  j["agree_gate"] = s.agree_gate;
  j["agree_bias"] = s.agree_bias;
  j["tool_mid"] = s.tool_mid;
  j["tool_skill"] = s.tool_skill;
  j["tool_noise"] = s.tool_noise;
  j["claim_support_mid"] = s.claim_support_mid;
  j["claim_support_skill"] = s.claim_support_skill;
  j["claims_min"] = s.claims_min;
  j["claims_max"] = s.claims_max;
  return j;
}

SimulateSpec simulate_spec_from_json(const json& j) {
  check_keys(j, "simulate",
             {"trials", "calib_size", "test_size", "train_size", "alpha", "seed",
              "smoothing", "synthetic", "head", "compare_validation_rho"},
             ErrorCode::config_error);
  SimulateSpec s = default_simulate_spec();
  if (j.contains("trials")) s.trials = j.at("trials").get<int>();
  if (j.contains("calib_size")) s.calib_size = j.at("calib_size").get<int>();
  if (j.contains("test_size")) s.test_size = j.at("test_size").get<int>();
  if (j.contains("train_size")) s.train_size = j.at("train_size").get<int>();
  if (j.contains("alpha")) s.alpha = get_number(j.at("alpha"), "simulate.alpha");
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("smoothing"))
    s.smoothing = smoothing_from_string(j.at("smoothing").get<std::string>());
  if (j.contains("synthetic")) s.synthetic = synthetic_spec_from_json(j.at("synthetic"));
  if (j.contains("head")) s.head = head_config_from_json(j.at("head"), s.seed);
  if (j.contains("compare_validation_rho") && !j.at("compare_validation_rho").is_null())
    s.compare_validation_rho =
        get_number(j.at("compare_validation_rho"), "compare_validation_rho");
  return s;
}

json simulate_spec_to_json(const SimulateSpec& s) {
  json j;
  j["trials"] = s.trials;
  j["calib_size"] = s.calib_size;
  j["test_size"] = s.test_size;
  j["train_size"] = s.train_size;
  j["alpha"] = s.alpha;
  j["seed"] = s.seed;
  j["smoothing"] = to_string(s.smoothing);
  j["synthetic"] = synthetic_spec_to_json(s.synthetic);
  j["head"] = head_config_to_json(s.head);
  j["compare_validation_rho"] =
      s.compare_validation_rho.has_value() ? json(*s.compare_validation_rho) : json(nullptr);
  return j;
}

json validity_report_to_json(const ValidityReport& r, const std::string& hash) {
  json j;
  j["trials"] = r.trials;
  j["alpha"] = r.alpha;
  j["violation_rate"] = r.violation_rate;
  j["mean_risk"] = r.mean_risk;
  j["mean_coverage"] = r.mean_coverage;
  j["risk_p50"] = r.risk_p50;
  j["risk_p90"] = r.risk_p90;
  j["risk_max"] = r.risk_max;
  j["zero_coverage_trials"] = r.zero_coverage_trials;
  j["answered_error_fraction_mean"] = r.answered_error_fraction_mean;
  j["base_error_rate_mean"] = r.base_error_rate_mean;
  if (r.has_validation) {
    j["validation"] = json{{"tau", r.validation_tau},
                           {"violation_rate", r.validation_violation_rate},
                           {"mean_risk", r.validation_mean_risk},
                           {"mean_coverage", r.validation_mean_coverage}};
  } else {
    j["validation"] = nullptr;
  }
  j["shift"] = r.shifted
                   ? json{{"kind", r.shift_kind}, {"magnitude", r.shift_magnitude}}
                   : json(nullptr);
  j["elapsed_seconds"] = r.elapsed_seconds;
  j["seed"] = r.seed;
  j["config_hash"] = hash;
  return j;
}

// ---------------------------------------------------------------------------
// Files and hashing
// ---------------------------------------------------------------------------

std::string config_hash(const json& j) {
  std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const std::exception&) {
    throw Error(ErrorCode::data_error, "malformed JSON in " + path);
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp);
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace {

json isotonic_to_json(const IsotonicMap& map) {
  json arr = json::array();
  for (const auto& [x, y] : map.breakpoints) arr.push_back(json::array({x, y}));
  return json{{"breakpoints", std::move(arr)}};
}

IsotonicMap isotonic_from_json(const json& j) {
  check_keys(j, "isotonic", {"breakpoints"}, ErrorCode::data_error);
  IsotonicMap map;
  for (const auto& bp : j.at("breakpoints")) {
    if (!bp.is_array() || bp.size() != 2)
      throw Error(ErrorCode::data_error, "isotonic breakpoints must be [input, output] pairs");
    map.breakpoints.emplace_back(bp[0].get<double>(), bp[1].get<double>());
  }
  return map;
}

json policy_to_json(const ThresholdPolicy& p, const DecisionConfig& d,
                    const FeatureStats& stats) {
  json j;
  j["mode"] = to_string(p.mode);
  j["global_tau"] = p.global_tau;
  if (p.buckets.empty()) {
    j["buckets"] = nullptr;
  } else {
    json arr = json::array();
    for (const auto& b : p.buckets)
      arr.push_back(json{{"name", b.name},
                         {"lo", b.lo},
                         {"hi", b.hi},
                         {"tau", b.tau},
                         {"count", b.count},
                         {"inherited", b.inherited}});
    j["buckets"] = std::move(arr);
  }
  j["alpha_or_rho"] = p.alpha_or_rho;
  j["calibration_size"] = p.calibration_size;
  j["smoothing"] = to_string(p.smoothing);
  j["no_errors_observed"] = p.no_errors_observed;
  j["decision"] = json{{"retry_margin", d.retry_margin},
                       {"retry_coverage_threshold", d.retry_coverage_threshold},
                       {"reason_coverage_threshold", d.reason_coverage_threshold},
                       {"reason_dispersion_threshold", d.reason_dispersion_threshold},
                       {"reason_tool_threshold", d.reason_tool_threshold},
                       {"reason_verifier_threshold", d.reason_verifier_threshold}};
  j["feature_stats"] = json{{"mean", stats.mean}, {"stddev", stats.stddev}};
  return j;
}

}  // namespace

json artifact_to_json(const CalibrationArtifact& a) {
  json j;
  j["version"] = a.version;
  json head;
  head["kind"] = to_string(a.head.kind);
  head["d"] = a.head.d;
  head["hidden"] = a.head.hidden;
  head["weights"] = a.head.weights;
  head["temperature"] = a.head.temperature;
  head["temp_indices"] = a.head.temp_indices;
  head["l2_lambda"] = a.head.l2_lambda;
  head["seed"] = a.head.seed;
  head["schema_hash"] = a.head.schema_hash;
  j["head"] = std::move(head);
  j["isotonic"] = a.isotonic.has_value() ? isotonic_to_json(*a.isotonic) : json(nullptr);
  j["policy"] = policy_to_json(a.policy, a.decision, a.feature_stats);
  json fc = feature_config_to_json(a.feature_config);
  fc["schema"] = a.feature_config.schema();
  fc["schema_hash"] = a.feature_config.schema_hash();
  j["feature_config"] = std::move(fc);
  j["provenance"] = json{
      {"seed", a.provenance.seed},
      {"split_fractions",
       json::array({a.provenance.split.train, a.provenance.split.tune,
                    a.provenance.split.calibrate})},
      {"alpha_or_rho", a.provenance.alpha_or_rho},
      {"mode", to_string(a.provenance.mode)},
      {"config_hash", a.provenance.config_hash},
      {"created", a.provenance.created}};
  return j;
}

CalibrationArtifact artifact_from_json(const json& j) {
  check_keys(j, "artifact",
             {"version", "head", "isotonic", "policy", "feature_config", "provenance"},
             ErrorCode::data_error);
  for (const char* k : {"version", "head", "isotonic", "policy", "feature_config", "provenance"})
    if (!j.contains(k))
      throw Error(ErrorCode::data_error, std::string("artifact missing key \"") + k + "\"");

  CalibrationArtifact a;
  a.version = j.at("version").get<std::string>();

  const json& h = j.at("head");
  check_keys(h, "head",
             {"kind", "d", "hidden", "weights", "temperature", "temp_indices", "l2_lambda",
              "seed", "schema_hash"},
             ErrorCode::data_error);
  a.head.kind = head_kind_from_string(h.at("kind").get<std::string>());
  a.head.d = h.at("d").get<int>();
  a.head.hidden = h.at("hidden").get<int>();
  a.head.weights = get_number_array(h.at("weights"), "head.weights");
  a.head.temperature = get_number(h.at("temperature"), "head.temperature");
  for (const auto& e : h.at("temp_indices")) a.head.temp_indices.push_back(e.get<int>());
  a.head.l2_lambda = get_number(h.at("l2_lambda"), "head.l2_lambda");
  a.head.seed = h.at("seed").get<std::int64_t>();
  a.head.schema_hash = h.at("schema_hash").get<std::string>();

  if (!j.at("isotonic").is_null()) a.isotonic = isotonic_from_json(j.at("isotonic"));

  const json& p = j.at("policy");
  check_keys(p, "policy",
             {"mode", "global_tau", "buckets", "alpha_or_rho", "calibration_size",
              "smoothing", "no_errors_observed", "decision", "feature_stats"},
             ErrorCode::data_error);
  a.policy.mode = policy_mode_from_string(p.at("mode").get<std::string>());
  a.policy.global_tau = get_number(p.at("global_tau"), "policy.global_tau");
  if (p.contains("buckets") && !p.at("buckets").is_null()) {
    for (const auto& b : p.at("buckets")) {
      PolicyBucket bucket;
      bucket.name = b.at("name").get<std::string>();
      bucket.lo = get_number(b.at("lo"), "bucket.lo");
      bucket.hi = get_number(b.at("hi"), "bucket.hi");
      bucket.tau = get_number(b.at("tau"), "bucket.tau");
      bucket.count = b.at("count").get<int>();
      bucket.inherited = b.at("inherited").get<bool>();
      a.policy.buckets.push_back(std::move(bucket));
    }
  }
  a.policy.alpha_or_rho = get_number(p.at("alpha_or_rho"), "policy.alpha_or_rho");
  a.policy.calibration_size = p.at("calibration_size").get<int>();
  a.policy.smoothing = smoothing_from_string(p.at("smoothing").get<std::string>());
  a.policy.no_errors_observed = p.at("no_errors_observed").get<bool>();
  const json& d = p.at("decision");
  a.decision.retry_margin = get_number(d.at("retry_margin"), "retry_margin");
  a.decision.retry_coverage_threshold =
      get_number(d.at("retry_coverage_threshold"), "retry_coverage_threshold");
  a.decision.reason_coverage_threshold =
      get_number(d.at("reason_coverage_threshold"), "reason_coverage_threshold");
  a.decision.reason_dispersion_threshold =
      get_number(d.at("reason_dispersion_threshold"), "reason_dispersion_threshold");
  a.decision.reason_tool_threshold =
      get_number(d.at("reason_tool_threshold"), "reason_tool_threshold");
  a.decision.reason_verifier_threshold =
      get_number(d.at("reason_verifier_threshold"), "reason_verifier_threshold");
  const json& fs = p.at("feature_stats");
  a.feature_stats.mean = get_number_array(fs.at("mean"), "feature_stats.mean");
  a.feature_stats.stddev = get_number_array(fs.at("stddev"), "feature_stats.stddev");

  json fc = j.at("feature_config");
  std::string stored_hash;
  if (fc.contains("schema_hash")) {
    stored_hash = fc.at("schema_hash").get<std::string>();
    fc.erase("schema_hash");
  }
  if (fc.contains("schema")) fc.erase("schema");
  a.feature_config = feature_config_from_json(fc);
  if (!stored_hash.empty() && stored_hash != a.feature_config.schema_hash())
    throw Error(ErrorCode::hash_mismatch,
                "stored schema hash does not match the feature config");

  const json& prov = j.at("provenance");
  check_keys(prov, "provenance",
             {"seed", "split_fractions", "alpha_or_rho", "mode", "config_hash", "created"},
             ErrorCode::data_error);
  a.provenance.seed = prov.at("seed").get<std::uint64_t>();
  const json& sf = prov.at("split_fractions");
  if (!sf.is_array() || sf.size() != 3)
    throw Error(ErrorCode::data_error, "split_fractions must have three entries");
  a.provenance.split.train = sf[0].get<double>();
  a.provenance.split.tune = sf[1].get<double>();
  a.provenance.split.calibrate = sf[2].get<double>();
  a.provenance.alpha_or_rho = get_number(prov.at("alpha_or_rho"), "provenance.alpha_or_rho");
  a.provenance.mode = policy_mode_from_string(prov.at("mode").get<std::string>());
  a.provenance.config_hash = prov.at("config_hash").get<std::string>();
  a.provenance.created = prov.at("created").get<std::string>();
  return a;
}

json decision_to_json(const DecisionOutcome& o, bool include_message) {
  json j;
  j["id"] = o.id;
  j["decision"] = o.answer ? "answer" : "abstain";
  j["confidence"] = o.confidence;
  j["reason"] = o.reason.has_value() ? json(to_string(*o.reason)) : json(nullptr);
  j["retried"] = o.retried;
  if (include_message) j["message"] = o.message;
  return j;
}

}  // namespace unicr::io
