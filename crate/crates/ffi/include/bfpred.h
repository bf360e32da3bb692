#ifndef BFPRED_H
#define BFPRED_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BfpredStatus {
  BFPRED_STATUS_OK = 0,
  // Null pointer or non-UTF-8 string.
  BFPRED_STATUS_INVALID_ARGUMENT = 1,
  BFPRED_STATUS_PARSE = 2,
  BFPRED_STATUS_DOMAIN = 3,
  BFPRED_STATUS_CONFIG = 4,
  // Work the library declines, such as oversized exhaustive searches.
  BFPRED_STATUS_REFUSED = 5,
  // An internal contract failed; indicates a library bug.
  BFPRED_STATUS_CONTRACT = 6,
  BFPRED_STATUS_PANIC = 7,
} BfpredStatus;

// A problem instance, optionally with an attached prediction.
typedef struct BfpredInstance BfpredInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; never free it.
const char *bfpred_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next call on this thread; never free it.
const char *bfpred_last_error(void);

// Frees a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void bfpred_string_free(char *s);

// Parses an instance document (JSON).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum BfpredStatus bfpred_instance_parse(const char *json, struct BfpredInstance **out);

// Draws an instance of `family` (`additive`, `coverage` or `cut`) with
// costs uniform on `(0, budget/2]`.
//
// # Safety
// `family` and `budget` must be NUL-terminated strings; `out` must be writable.
enum BfpredStatus bfpred_instance_generate(const char *family,
                                           size_t n,
                                           const char *budget,
                                           uint64_t seed,
                                           struct BfpredInstance **out);

// # Safety
// `inst` must come from this library and not have been freed. Null is ignored.
void bfpred_instance_free(struct BfpredInstance *inst);

// # Safety
// `inst` must be a live handle; `out` must be writable.
enum BfpredStatus bfpred_instance_agents(const struct BfpredInstance *inst, size_t *out);

// Canonical document for the instance, including any prediction.
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum BfpredStatus bfpred_instance_render(const struct BfpredInstance *inst, char **out);

// Exact offline optimum as a rational string `p/q`.
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum BfpredStatus bfpred_instance_optimum(const struct BfpredInstance *inst, char **out);

// Runs one mechanism once under truthful bids and writes the outcome as JSON.
//
// `epsilon` may be null, in which case prediction mechanisms use the
// instance's attached prediction.
//
// # Safety
// `inst` must be a live handle; string arguments NUL-terminated or null where
// allowed; `out` must be writable.
enum BfpredStatus bfpred_run_once(const struct BfpredInstance *inst,
                                  const char *mechanism,
                                  const char *epsilon,
                                  uint64_t seed,
                                  char **out);

// Monte Carlo mean of `v(S)/OPT` and its standard error.
//
// # Safety
// As for [`bfpred_run_once`]; `mean` and `std_error` must be writable.
enum BfpredStatus bfpred_estimate_ratio(const struct BfpredInstance *inst,
                                        const char *mechanism,
                                        const char *epsilon,
                                        size_t trials,
                                        uint64_t seed,
                                        double *mean,
                                        double *std_error);

// Exhaustive-order truthfulness, budget and IR audit with default settings.
// `passed` receives 1 or 0; `violations` the total number of findings.
//
// # Safety
// As for [`bfpred_run_once`]; `passed` and `violations` must be writable.
enum BfpredStatus bfpred_audit(const struct BfpredInstance *inst,
                               const char *mechanism,
                               const char *epsilon,
                               int32_t *passed,
                               size_t *violations);

// Evaluates bound `index` of a named preset at `epsilon`.
//
// # Safety
// `preset_name` and `epsilon` must be NUL-terminated; `out` must be writable.
enum BfpredStatus bfpred_bound_eval(const char *preset_name,
                                    size_t index,
                                    const char *epsilon,
                                    double *out);

// Best expected ratio of a deterministic two-agent mechanism on the hard
// distribution with `k` grid steps, as an exact string.
//
// # Safety
// `out` must be writable.
enum BfpredStatus bfpred_lowerbound(size_t k, char **out);

// Runs an experiment config (the JSON the CLI's `exec` accepts) and returns
// its summary document. `exit_code` receives 0, or 1 when violations were found.
//
// # Safety
// `config_json` must be NUL-terminated; `summary` and `exit_code` must be writable.
enum BfpredStatus bfpred_experiment_run(const char *config_json,
                                        char **summary,
                                        int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BFPRED_H */
