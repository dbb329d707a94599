/* SPDX-License-Identifier: Apache-2.0
 * Copyright 2026 The UniCR Authors
 *
 * C API for the unicr shared library. All heavyweight state lives behind the
 * opaque artifact handle; every entry point returns a unicr_status, and
 * unicr_last_error() gives the thread-local message for the most recent
 * failure on the calling thread.
 *
 * Status values double as CLI exit codes: 0 ok, 2 config error, 3 data
 * error, 4 unsatisfiable constraint (abstain-always policy), 5 internal.
 */

#ifndef UNICR_UNICR_H
#define UNICR_UNICR_H

#include <stddef.h>

#if defined(_WIN32)
#define UNICR_API __declspec(dllexport)
#else
#define UNICR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum unicr_status {
  UNICR_OK = 0,
  UNICR_CONFIG_ERROR = 2,
  UNICR_DATA_ERROR = 3,
  UNICR_UNSATISFIABLE = 4,
  UNICR_INTERNAL_ERROR = 5
} unicr_status;

typedef struct unicr_artifact unicr_artifact; /* opaque */

/* Library semantic version string, e.g. "1.0.0". */
UNICR_API const char *unicr_version(void);

/* Message for the most recent failure on this thread; never NULL. */
UNICR_API const char *unicr_last_error(void);

/* ---- batch operations (file to file) --------------------------------- */

/* Assemble evidence vectors for every record. config_json holds a feature
 * config (or a full run config; its "features" block is used). Writes one
 * JSON object per line plus a .meta.json sidecar with schema and hashes. */
UNICR_API unicr_status unicr_extract(const char *records_path,
                                     const char *config_json,
                                     const char *out_features_path);

/* Train a calibration artifact. config_json holds a run config. Returns
 * UNICR_UNSATISFIABLE (artifact still written) when threshold selection
 * could only satisfy the budget by always abstaining. */
UNICR_API unicr_status unicr_train(const char *records_path,
                                   const char *config_json,
                                   const char *out_artifact_path);

/* Decide every record in a JSONL file against a loaded artifact. Decisions
 * are written as JSONL {id, decision, confidence, reason, retried} in input
 * order. */
UNICR_API unicr_status unicr_infer_file(const unicr_artifact *artifact,
                                        const char *records_path,
                                        const char *out_decisions_path);

/* Selective-prediction evaluation. flags_json keys:
 *   "decisions": path  + "records": path   (labels joined on id), or
 *   "pairs": path of JSONL {confidence, label}
 *   optional "alpha", "tau", "bootstrap", "risk_budget", "bins", "seed".
 * Writes summary.json, rc_curve.csv and reliability.csv under out_dir. */
UNICR_API unicr_status unicr_eval(const char *flags_json, const char *out_dir);

/* Monte Carlo risk-control validity experiment. spec_json may be "" or
 * "default" for the built-in spec. Writes validity_report.json. */
UNICR_API unicr_status unicr_simulate(const char *spec_json,
                                      const char *out_report_path);

/* ---- artifact handles -------------------------------------------------- */

/* Load and verify an artifact (version and schema hash are checked).
 * expected_mode may be NULL or one of "validation", "conformal",
 * "conformal_bucketed"; a mismatch is rejected. */
UNICR_API unicr_status unicr_artifact_open(const char *path,
                                           const char *expected_mode,
                                           unicr_artifact **out);

UNICR_API void unicr_artifact_close(unicr_artifact *artifact);

/* Canonical JSON summary {version, mode, tau, schema, ...}; caller frees
 * with unicr_free. */
UNICR_API unicr_status unicr_artifact_info(const unicr_artifact *artifact,
                                           char **out_json);

/* Retrieval-refresh hook for unicr_decide: receive the record being retried
 * as JSON, return 0 and set *refreshed_json (allocated with malloc) to the
 * refreshed record, or return nonzero on failure. */
typedef int (*unicr_refresh_fn)(const char *record_json, char **refreshed_json,
                                void *user_data);

/* Decide one record (JSON object as in the records JSONL). The optional
 * refresh callback enables the single retrieval retry. *out_decision_json
 * is allocated by the library; free with unicr_free. */
UNICR_API unicr_status unicr_decide(const unicr_artifact *artifact,
                                    const char *record_json,
                                    unicr_refresh_fn refresh, void *user_data,
                                    char **out_decision_json);

UNICR_API void unicr_free(char *ptr);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* UNICR_UNICR_H */
