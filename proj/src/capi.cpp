// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/unicr.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unicr/error.hpp"
#include "unicr/eval.hpp"
#include "unicr/io.hpp"
#include "unicr/metrics.hpp"
#include "unicr/pipeline.hpp"
#include "unicr/simulate.hpp"

using unicr::Error;
using unicr::ErrorCode;
using json = nlohmann::json;

struct unicr_artifact {
  unicr::CalibrationArtifact impl;
};

namespace {

thread_local std::string g_last_error;

void set_last_error(const std::string& msg) { g_last_error = msg; }

unicr_status map_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config_error:
      return UNICR_CONFIG_ERROR;
    case ErrorCode::unsatisfiable:
      return UNICR_UNSATISFIABLE;
    case ErrorCode::internal_error:
      return UNICR_INTERNAL_ERROR;
    default:
      return UNICR_DATA_ERROR;
  }
}

template <typename F>
unicr_status guarded(F&& f) noexcept {
  try {
    return f();
  } catch (const Error& e) {
    set_last_error(e.what());
    return map_code(e.code());
  } catch (const std::exception& e) {
    set_last_error(e.what());
    return UNICR_INTERNAL_ERROR;
  } catch (...) {
    set_last_error("unknown error");
    return UNICR_INTERNAL_ERROR;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw Error(ErrorCode::config_error, std::string(what) + " is null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_json(const char* text, const char* what) {
  try {
    return json::parse(text);
  } catch (const std::exception&) {
    throw Error(ErrorCode::config_error, std::string("malformed JSON in ") + what);
  }
}

// A config string may be a bare feature config or a full run config; the
// presence of run-level keys decides. JSON type errors surface as config
// errors, not internal ones.
unicr::RunConfig run_config_from_string(const char* config_json) {
  json j = parse_json(config_json, "config");
  try {
    for (const char* key :
         {"features", "head", "policy", "decision", "split", "seed", "isotonic"})
      if (j.contains(key)) return unicr::io::run_config_from_json(j);
    unicr::RunConfig config;
    config.features = unicr::io::feature_config_from_json(j);
    config.head.seed = static_cast<std::int64_t>(config.seed);
    return config;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::config_error, std::string("config: ") + e.what());
  }
}

}  // namespace

extern "C" {

const char* unicr_version(void) { return "1.0.0"; }

const char* unicr_last_error(void) { return g_last_error.c_str(); }

unicr_status unicr_extract(const char* records_path, const char* config_json,
                           const char* out_features_path) {
  return guarded([&]() -> unicr_status {
    require(records_path, "records_path");
    require(config_json, "config_json");
    require(out_features_path, "out_features_path");

    unicr::RunConfig config = run_config_from_string(config_json);
    config.features.validate();
    auto records = unicr::io::read_records_jsonl(records_path);

    std::string body;
    for (const auto& r : records) {
      unicr::AssembledFeatures f = unicr::assemble_features(r, config.features);
      json line;
      line["id"] = r.id;
      line["values"] = f.vec.values;
      line["degenerate_evidence"] = f.degenerate_evidence;
      body += line.dump();
      body += '\n';
    }
    unicr::io::write_text_file(out_features_path, body);

    json meta;
    meta["schema"] = config.features.schema();
    meta["schema_hash"] = config.features.schema_hash();
    meta["config_hash"] = unicr::io::config_hash(unicr::io::run_config_to_json(config));
    meta["count"] = records.size();
    unicr::io::write_json_file(std::string(out_features_path) + ".meta.json", meta);
    return UNICR_OK;
  });
}

unicr_status unicr_train(const char* records_path, const char* config_json,
                         const char* out_artifact_path) {
  return guarded([&]() -> unicr_status {
    require(records_path, "records_path");
    require(config_json, "config_json");
    require(out_artifact_path, "out_artifact_path");

    unicr::RunConfig config = run_config_from_string(config_json);
    auto records = unicr::io::read_records_jsonl(records_path);
    unicr::CalibrationArtifact artifact = unicr::train(records, config);
    unicr::save_artifact(artifact, out_artifact_path);
    if (artifact.policy.abstain_always()) {
      set_last_error(
          "risk budget unsatisfiable on the calibration split; policy abstains always "
          "(artifact written)");
      return UNICR_UNSATISFIABLE;
    }
    return UNICR_OK;
  });
}

unicr_status unicr_artifact_open(const char* path, const char* expected_mode,
                                 unicr_artifact** out) {
  return guarded([&]() -> unicr_status {
    require(path, "path");
    require(out, "out");
    std::optional<unicr::PolicyMode> mode;
    if (expected_mode != nullptr && expected_mode[0] != '\0')
      mode = unicr::policy_mode_from_string(expected_mode);
    auto* handle = new unicr_artifact{unicr::load_artifact(path, mode)};
    *out = handle;
    return UNICR_OK;
  });
}

void unicr_artifact_close(unicr_artifact* artifact) { delete artifact; }

unicr_status unicr_artifact_info(const unicr_artifact* artifact, char** out_json) {
  return guarded([&]() -> unicr_status {
    require(artifact, "artifact");
    require(out_json, "out_json");
    const auto& a = artifact->impl;
    json j;
    j["version"] = a.version;
    j["mode"] = unicr::to_string(a.policy.mode);
    j["global_tau"] = a.policy.global_tau;
    j["abstain_always"] = a.policy.abstain_always();
    j["schema"] = a.feature_config.schema();
    j["schema_hash"] = a.feature_config.schema_hash();
    j["calibration_size"] = a.policy.calibration_size;
    j["alpha_or_rho"] = a.policy.alpha_or_rho;
    j["created"] = a.provenance.created;
    j["config_hash"] = a.provenance.config_hash;
    *out_json = dup_string(j.dump());
    return UNICR_OK;
  });
}

unicr_status unicr_infer_file(const unicr_artifact* artifact, const char* records_path,
                              const char* out_decisions_path) {
  return guarded([&]() -> unicr_status {
    require(artifact, "artifact");
    require(records_path, "records_path");
    require(out_decisions_path, "out_decisions_path");

    auto records = unicr::io::read_records_jsonl(records_path);
    std::string body;
    for (const auto& r : records) {
      unicr::DecisionOutcome outcome = unicr::infer(artifact->impl, r);
      body += unicr::io::decision_to_json(outcome).dump();
      body += '\n';
    }
    unicr::io::write_text_file(out_decisions_path, body);

    json meta;
    meta["config_hash"] = artifact->impl.provenance.config_hash;
    meta["count"] = records.size();
    unicr::io::write_json_file(std::string(out_decisions_path) + ".meta.json", meta);
    return UNICR_OK;
  });
}

unicr_status unicr_decide(const unicr_artifact* artifact, const char* record_json,
                          unicr_refresh_fn refresh, void* user_data,
                          char** out_decision_json) {
  return guarded([&]() -> unicr_status {
    require(artifact, "artifact");
    require(record_json, "record_json");
    require(out_decision_json, "out_decision_json");

    unicr::RawSignalsRecord record =
        unicr::io::record_from_json(parse_json(record_json, "record"));

    unicr::RetryCallback callback;
    if (refresh != nullptr) {
      callback = [refresh, user_data](const unicr::RawSignalsRecord& r)
          -> std::optional<unicr::RawSignalsRecord> {
        std::string text = unicr::io::record_to_json(r, /*include_debug=*/false).dump();
        char* refreshed = nullptr;
        int rc = refresh(text.c_str(), &refreshed, user_data);
        if (rc != 0 || refreshed == nullptr) return std::nullopt;
        std::string body(refreshed);
        std::free(refreshed);
        return unicr::io::record_from_json(json::parse(body));
      };
    }

    unicr::DecisionOutcome outcome = unicr::infer(artifact->impl, record, nullptr, callback);
    *out_decision_json =
        dup_string(unicr::io::decision_to_json(outcome, /*include_message=*/true).dump());
    return UNICR_OK;
  });
}

unicr_status unicr_eval(const char* flags_json, const char* out_dir) {
  return guarded([&]() -> unicr_status {
    require(flags_json, "flags_json");
    require(out_dir, "out_dir");
    json flags = parse_json(flags_json, "flags");
    for (auto it = flags.begin(); it != flags.end(); ++it) {
      static const char* allowed[] = {"decisions", "records", "pairs",    "alpha",
                                      "tau",       "bootstrap", "risk_budget", "bins",
                                      "seed"};
      bool ok = false;
      for (const char* k : allowed)
        if (it.key() == k) ok = true;
      if (!ok) throw Error(ErrorCode::config_error, "eval: unknown flag \"" + it.key() + "\"");
    }
    for (const char* k : {"alpha", "tau", "risk_budget"})
      if (flags.contains(k) && !flags.at(k).is_number())
        throw Error(ErrorCode::config_error, std::string("eval: ") + k + " must be a number");
    for (const char* k : {"decisions", "records", "pairs"})
      if (flags.contains(k) && !flags.at(k).is_string())
        throw Error(ErrorCode::config_error, std::string("eval: ") + k + " must be a path");

    std::vector<double> conf, labels;
    std::vector<bool> answered;
    bool have_answered = false;

    if (flags.contains("pairs")) {
      std::string path = flags.at("pairs").get<std::string>();
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const std::exception&) {
          throw Error(ErrorCode::data_error,
                      path + " line " + std::to_string(line_no) + ": malformed JSON");
        }
        if (!j.contains("confidence") || !j.at("confidence").is_number() ||
            !j.contains("label"))
          throw Error(ErrorCode::data_error, path + " line " + std::to_string(line_no) +
                                                 ": needs confidence and label");
        conf.push_back(j.at("confidence").get<double>());
        double value;
        if (j.at("label").is_number())
          value = j.at("label").get<double>();
        else if (j.at("label").is_object() && j.at("label").contains("value") &&
                 j.at("label").at("value").is_number())
          value = j.at("label").at("value").get<double>();
        else
          throw Error(ErrorCode::data_error,
                      path + " line " + std::to_string(line_no) + ": bad label");
        if (!(value >= 0.0 && value <= 1.0))
          throw Error(ErrorCode::data_error, path + " line " + std::to_string(line_no) +
                                                 ": label value outside [0,1]");
        labels.push_back(value);
      }
    } else if (flags.contains("decisions") && flags.contains("records")) {
      auto records = unicr::io::read_records_jsonl(flags.at("records").get<std::string>());
      std::map<std::string, double> label_by_id;
      for (const auto& r : records) {
        if (!r.label.has_value())
          throw Error(ErrorCode::data_error, "record " + r.id + " is missing its label");
        label_by_id[r.id] = r.label->value;
      }
      std::string path = flags.at("decisions").get<std::string>();
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const std::exception&) {
          throw Error(ErrorCode::data_error,
                      path + " line " + std::to_string(line_no) + ": malformed JSON");
        }
        std::string id = j.at("id").get<std::string>();
        auto it = label_by_id.find(id);
        if (it == label_by_id.end())
          throw Error(ErrorCode::data_error, "decision id \"" + id + "\" has no labeled record");
        conf.push_back(j.at("confidence").get<double>());
        labels.push_back(it->second);
        answered.push_back(j.at("decision").get<std::string>() == "answer");
      }
      have_answered = true;
    } else {
      throw Error(ErrorCode::config_error,
                  "eval needs either \"pairs\" or \"decisions\"+\"records\"");
    }
    if (conf.empty()) throw Error(ErrorCode::insufficient_data, "eval has no examples");

    double risk_budget = flags.contains("risk_budget")
                             ? flags.at("risk_budget").get<double>()
                             : 0.05;
    double alpha = flags.contains("alpha") ? flags.at("alpha").get<double>() : risk_budget;
    int bins = flags.contains("bins") ? flags.at("bins").get<int>() : unicr::kEceBins;
    std::uint64_t seed =
        flags.contains("seed") ? flags.at("seed").get<std::uint64_t>() : 17;

    unicr::RCCurve curve = unicr::rc_curve(conf, labels);
    unicr::CalibrationMetricsReport metrics = unicr::calibration_metrics(conf, labels);

    json summary;
    summary["n"] = conf.size();
    summary["ece"] = metrics.ece_fixed;
    summary["ece_adaptive"] = metrics.ece_adaptive;
    summary["brier"] = metrics.brier;
    summary["nll"] = metrics.nll;
    summary["aurc"] = unicr::aurc(curve);
    summary["risk_budget"] = risk_budget;
    summary["coverage_at_risk"] = unicr::coverage_at_risk(curve, risk_budget);
    if (flags.contains("tau")) {
      double tau = flags.at("tau").get<double>();
      unicr::ThresholdPolicy policy;
      policy.mode = unicr::PolicyMode::validation;
      policy.global_tau = tau;
      policy.alpha_or_rho = alpha;
      int B = flags.contains("bootstrap") ? flags.at("bootstrap").get<int>() : 500;
      summary["tau"] = tau;
      summary["violation_rate"] =
          unicr::bootstrap_violation_rate(conf, labels, policy, alpha, B, seed);
    } else {
      summary["tau"] = nullptr;
      summary["violation_rate"] = nullptr;
    }
    if (have_answered) {
      unicr::SelectiveOutcomeSet outcomes;
      outcomes.confidences = conf;
      for (double v : labels)
        outcomes.labels.push_back(unicr::CorrectnessLabel{unicr::LabelKind::graded, v});
      outcomes.answered_mask = answered;
      unicr::RiskCoverage rc = unicr::selective_risk(outcomes);
      summary["achieved_risk"] = rc.risk;
      summary["achieved_coverage"] = rc.coverage;
      summary["zero_coverage"] = rc.zero_coverage;
    }
    summary["config_hash"] = unicr::io::config_hash(flags);

    std::filesystem::create_directories(out_dir);
    std::string dir(out_dir);
    unicr::io::write_json_file(dir + "/summary.json", summary);

    std::string rc_csv = "tau,coverage,risk\n";
    for (const auto& p : curve.points) {
      char row[96];
      std::snprintf(row, sizeof(row), "%.17g,%.17g,%.17g\n", p.tau, p.coverage, p.risk);
      rc_csv += row;
    }
    unicr::io::write_text_file(dir + "/rc_curve.csv", rc_csv);

    std::string rel_csv = "mean_conf,frac_correct,count\n";
    for (const auto& b : unicr::reliability_data(conf, labels, bins)) {
      char row[96];
      std::snprintf(row, sizeof(row), "%.17g,%.17g,%lld\n", b.mean_conf, b.frac_correct,
                    b.count);
      rel_csv += row;
    }
    unicr::io::write_text_file(dir + "/reliability.csv", rel_csv);
    return UNICR_OK;
  });
}

unicr_status unicr_simulate(const char* spec_json, const char* out_report_path) {
  return guarded([&]() -> unicr_status {
    require(out_report_path, "out_report_path");
    unicr::SimulateSpec spec;
    if (spec_json == nullptr || spec_json[0] == '\0' ||
        std::strcmp(spec_json, "default") == 0) {
      spec = unicr::default_simulate_spec();
    } else {
      spec = unicr::io::simulate_spec_from_json(parse_json(spec_json, "simulate spec"));
    }
    unicr::ValidityReport report = unicr::run_validity_experiment(spec);
    std::string hash = unicr::io::config_hash(unicr::io::simulate_spec_to_json(spec));
    unicr::io::write_json_file(out_report_path,
                               unicr::io::validity_report_to_json(report, hash));
    return UNICR_OK;
  });
}

void unicr_free(char* ptr) { std::free(ptr); }

}  // extern "C"
