// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#include "unicr/error.hpp"

namespace unicr {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_signal: return "missing_signal";
    case ErrorCode::invalid_signal: return "invalid_signal";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::degenerate_labels: return "degenerate_labels";
    case ErrorCode::schema_error: return "schema_error";
    case ErrorCode::config_error: return "config_error";
    case ErrorCode::data_error: return "data_error";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::hash_mismatch: return "hash_mismatch";
    case ErrorCode::unsatisfiable: return "unsatisfiable";
    case ErrorCode::internal_error: return "internal_error";
  }
  return "?";
}

}  // namespace unicr
