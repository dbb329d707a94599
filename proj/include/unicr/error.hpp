// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace unicr {

enum class ErrorCode {
  missing_signal,
  invalid_signal,
  insufficient_data,
  degenerate_labels,
  schema_error,
  config_error,
  data_error,
  io_error,
  version_mismatch,
  hash_mismatch,
  unsatisfiable,
  internal_error,
};

const char* to_string(ErrorCode code);

/// Library-wide exception. `stage` names the pipeline stage that threw,
/// so callers can surface stage-tagged failures.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string stage = {})
      : std::runtime_error(stage.empty() ? message : stage + ": " + message),
        code_(code),
        stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  ErrorCode code_;
  std::string stage_;
};

}  // namespace unicr
