// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors
//
// Batch CLI over the unicr C API. Subcommands: extract, train, infer, eval,
// simulate. Exit codes: 0 ok, 2 config error, 3 data error, 4 unsatisfiable
// constraint (abstain-always policy), 5 internal.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "unicr/unicr.h"

using json = nlohmann::json;

namespace {

int finish(unicr_status status) {
  if (status != UNICR_OK) std::fprintf(stderr, "unicr: %s\n", unicr_last_error());
  return static_cast<int>(status);
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "unicr: cannot open config %s\n", path.c_str());
    std::exit(UNICR_CONFIG_ERROR);
  }
  try {
    json j;
    in >> j;
    return j;
  } catch (const std::exception&) {
    std::fprintf(stderr, "unicr: malformed JSON in %s\n", path.c_str());
    std::exit(UNICR_CONFIG_ERROR);
  }
}

// Flag and environment overrides on top of the config file. UNICR_SEED beats
// the file; --seed beats both.
void apply_overrides(json& config, std::optional<std::uint64_t> seed_flag,
                     std::optional<double> alpha, std::optional<double> rho,
                     std::optional<std::string> mode, bool api_only) {
  if (const char* env = std::getenv("UNICR_SEED")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end != env && *end == '\0') config["seed"] = static_cast<std::uint64_t>(v);
  }
  if (seed_flag.has_value()) config["seed"] = *seed_flag;
  if (alpha.has_value() || rho.has_value() || mode.has_value()) {
    json& policy = config["policy"];
    if (!policy.is_object()) policy = json::object();
    if (mode.has_value()) policy["mode"] = *mode;
    if (alpha.has_value() || rho.has_value()) {
      policy.erase("alpha");
      policy.erase("rho");
      policy.erase("alpha_or_rho");
      if (alpha.has_value()) policy["alpha"] = *alpha;
      if (rho.has_value()) policy["rho"] = *rho;
    }
  }
  if (api_only) {
    json& features = config["features"];
    if (!features.is_object()) features = json::object();
    features["seq"] = false;
    features["entropy"] = false;
  }
}

std::string out_path(const std::string& out_dir, const std::string& name) {
  std::filesystem::create_directories(out_dir);
  return (std::filesystem::path(out_dir) / name).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unicr: calibrated confidence and risk-controlled refusal"};
  app.require_subcommand(1);

  std::string config_path, records_path, artifact_path, decisions_path, pairs_path;
  std::string spec_path, out_dir = ".", expected_mode_str;
  std::optional<std::uint64_t> seed_flag;
  std::optional<double> alpha_flag, rho_flag;
  std::optional<std::string> mode_flag;
  bool api_only = false;
  std::optional<double> tau_flag, risk_budget_flag;
  std::optional<int> bootstrap_flag;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed_flag, "override config seed");
    cmd->add_option("--out-dir", out_dir, "output directory");
  };

  CLI::App* extract = app.add_subcommand("extract", "assemble evidence vectors");
  extract->add_option("--records", records_path, "records JSONL")->required();
  extract->add_flag("--k-features", api_only, "API-only feature set (drop logit families)");
  add_common(extract);

  CLI::App* train = app.add_subcommand("train", "fit head and select thresholds");
  train->add_option("--records", records_path, "labeled records JSONL")->required();
  train->add_option("--alpha", alpha_flag, "conformal risk level");
  train->add_option("--rho", rho_flag, "validation risk budget");
  train->add_option("--mode", mode_flag, "validation|conformal|bucketed");
  train->add_flag("--k-features", api_only, "API-only feature set (drop logit families)");
  add_common(train);

  CLI::App* infer = app.add_subcommand("infer", "answer-or-abstain for each record");
  infer->add_option("--artifact", artifact_path, "calibration artifact JSON")->required();
  infer->add_option("--records", records_path, "records JSONL")->required();
  infer->add_option("--mode", mode_flag, "require this policy mode in the artifact");
  add_common(infer);

  CLI::App* eval = app.add_subcommand("eval", "selective-prediction metrics");
  eval->add_option("--decisions", decisions_path, "decisions JSONL (from infer)");
  eval->add_option("--records", records_path, "labeled records JSONL (joined on id)");
  eval->add_option("--pairs", pairs_path, "JSONL of {confidence, label}");
  eval->add_option("--alpha", alpha_flag, "risk level for the bootstrap check");
  eval->add_option("--tau", tau_flag, "threshold for the bootstrap violation check");
  eval->add_option("--risk-budget", risk_budget_flag, "budget for coverage_at_risk");
  eval->add_option("--bootstrap", bootstrap_flag, "bootstrap resamples");
  add_common(eval);

  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo risk-control validity");
  simulate->add_option("--spec", spec_path, "simulate spec JSON (omit for the default)");
  add_common(simulate);

  CLI11_PARSE(app, argc, argv);

  if (extract->parsed()) {
    json config = load_config_file(config_path);
    apply_overrides(config, seed_flag, {}, {}, {}, api_only);
    return finish(unicr_extract(records_path.c_str(), config.dump().c_str(),
                                out_path(out_dir, "features.jsonl").c_str()));
  }

  if (train->parsed()) {
    json config = load_config_file(config_path);
    apply_overrides(config, seed_flag, alpha_flag, rho_flag, mode_flag, api_only);
    return finish(unicr_train(records_path.c_str(), config.dump().c_str(),
                              out_path(out_dir, "artifact.json").c_str()));
  }

  if (infer->parsed()) {
    unicr_artifact* artifact = nullptr;
    unicr_status status = unicr_artifact_open(
        artifact_path.c_str(), mode_flag.has_value() ? mode_flag->c_str() : nullptr,
        &artifact);
    if (status != UNICR_OK) return finish(status);
    status = unicr_infer_file(artifact, records_path.c_str(),
                              out_path(out_dir, "decisions.jsonl").c_str());
    unicr_artifact_close(artifact);
    return finish(status);
  }

  if (eval->parsed()) {
    json flags = json::object();
    if (!decisions_path.empty()) flags["decisions"] = decisions_path;
    if (!records_path.empty()) flags["records"] = records_path;
    if (!pairs_path.empty()) flags["pairs"] = pairs_path;
    if (alpha_flag.has_value()) flags["alpha"] = *alpha_flag;
    if (tau_flag.has_value()) flags["tau"] = *tau_flag;
    if (risk_budget_flag.has_value()) flags["risk_budget"] = *risk_budget_flag;
    if (bootstrap_flag.has_value()) flags["bootstrap"] = *bootstrap_flag;
    if (seed_flag.has_value()) flags["seed"] = *seed_flag;
    std::filesystem::create_directories(out_dir);
    return finish(unicr_eval(flags.dump().c_str(), out_dir.c_str()));
  }

  if (simulate->parsed()) {
    std::string spec_text = "default";
    if (!spec_path.empty()) {
      json spec = load_config_file(spec_path);
      if (seed_flag.has_value()) spec["seed"] = *seed_flag;
      spec_text = spec.dump();
    }
    return finish(unicr_simulate(spec_text.c_str(),
                                 out_path(out_dir, "validity_report.json").c_str()));
  }

  return UNICR_CONFIG_ERROR;
}
