// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "unicr/eval.hpp"
#include "unicr/pipeline.hpp"
#include "unicr/simulate.hpp"
#include "unicr/types.hpp"

namespace unicr::io {

using json = nlohmann::json;

// --- records -----------------------------------------------------------

RawSignalsRecord record_from_json(const json& j);
json record_to_json(const RawSignalsRecord& record, bool include_debug = false);

/// Parse a JSONL records file. Schema violations raise data errors naming
/// the 1-based line number.
std::vector<RawSignalsRecord> read_records_jsonl(const std::string& path);
void write_records_jsonl(const std::string& path,
                         const std::vector<RawSignalsRecord>& records,
                         bool include_debug = false);

// --- configs -----------------------------------------------------------

/// Strict parsers: unknown keys are rejected.
FeatureConfig feature_config_from_json(const json& j);
json feature_config_to_json(const FeatureConfig& config);

RunConfig run_config_from_json(const json& j);
json run_config_to_json(const RunConfig& config);

SyntheticSpec synthetic_spec_from_json(const json& j);
json synthetic_spec_to_json(const SyntheticSpec& spec);

SimulateSpec simulate_spec_from_json(const json& j);
json simulate_spec_to_json(const SimulateSpec& spec);
json validity_report_to_json(const ValidityReport& report, const std::string& config_hash);

/// FNV-1a hash of the canonical (sorted-key) dump, hex-encoded.
std::string config_hash(const json& j);

json read_json_file(const std::string& path);

/// Atomic write (temp file + rename) of a canonical dump.
void write_json_file(const std::string& path, const json& j);
void write_text_file(const std::string& path, const std::string& text);

// --- artifacts ----------------------------------------------------------

json artifact_to_json(const CalibrationArtifact& artifact);
CalibrationArtifact artifact_from_json(const json& j);

// --- decisions ----------------------------------------------------------

json decision_to_json(const DecisionOutcome& outcome, bool include_message = false);

}  // namespace unicr::io
