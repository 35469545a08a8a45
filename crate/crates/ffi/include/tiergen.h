/* C interface for the tiergen planning and simulation library. */

#ifndef TIERGEN_H
#define TIERGEN_H

/* Generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call in this interface.
 */
typedef enum {
  /**
   * The call succeeded and the out parameters are filled in.
   */
  TG_STATUS_OK = 0,
  /**
   * An argument was rejected: null pointer, bad UTF-8, unknown preset,
   * out-of-range number, or a policy that fails validation.
   */
  TG_STATUS_INVALID_ARGUMENT = 1,
  /**
   * A JSON document could not be parsed into the expected shape.
   */
  TG_STATUS_PARSE = 2,
  /**
   * The inputs were well formed but no result exists: the planner found
   * no feasible policy, or the simulated policy exceeds memory capacity.
   */
  TG_STATUS_INFEASIBLE = 3,
  /**
   * An internal invariant failed; this is a bug in the library.
   */
  TG_STATUS_INTERNAL = 4,
} TgStatus;

/**
 * Opaque hardware profile handle.
 */
typedef struct TgHardware TgHardware;

/**
 * Opaque model description handle.
 */
typedef struct TgModel TgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message for the most recent failure on this thread, as a
 * NUL-terminated UTF-8 string. The empty string means no failure has been
 * recorded yet. The pointer stays valid until the next failing call on
 * this thread; do not free it.
 */
const char *tg_last_error(void);

/**
 * Frees a string previously returned through an `out` parameter.
 * Passing NULL is allowed and does nothing.
 *
 * # Safety
 * `s` must be a pointer obtained from this library and not yet freed.
 */
void tg_string_free(char *s);

/**
 * Parses a model description from JSON (fields `l`, `h1`, `h2`, `nh`, and
 * optional `bytes_per_element`) and stores a new handle in `out`.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must point to writable memory.
 */
TgStatus tg_model_from_json(const char *json, TgModel **out);

/**
 * Looks up a built-in model preset by name (for example "opt-175b") and
 * stores a new handle in `out`.
 *
 * # Safety
 * `name` must be NUL-terminated; `out` must point to writable memory.
 */
TgStatus tg_model_preset(const char *name, TgModel **out);

/**
 * Releases a model handle. Passing NULL is allowed and does nothing.
 *
 * # Safety
 * `model` must be a handle from this library and not yet freed.
 */
void tg_model_free(TgModel *model);

/**
 * Parses a hardware profile from JSON (bandwidths, compute rates, and
 * memory capacities) and stores a new handle in `out`.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must point to writable memory.
 */
TgStatus tg_hardware_from_json(const char *json, TgHardware **out);

/**
 * Looks up a built-in hardware preset by name (for example "t4-gcp") and
 * stores a new handle in `out`.
 *
 * # Safety
 * `name` must be NUL-terminated; `out` must point to writable memory.
 */
TgStatus tg_hardware_preset(const char *name, TgHardware **out);

/**
 * Releases a hardware handle. Passing NULL is allowed and does nothing.
 *
 * # Safety
 * `hardware` must be a handle from this library and not yet freed.
 */
void tg_hardware_free(TgHardware *hardware);

/**
 * Writes the total parameter bytes of the model to `out`.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable memory.
 */
TgStatus tg_weight_bytes(const TgModel *model, uint64_t *out);

/**
 * Writes the peak KV-cache bytes for `batch` sequences at full generated
 * length to `out`.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable memory.
 */
TgStatus tg_kv_cache_peak_bytes(const TgModel *model,
                                uint64_t batch,
                                uint64_t prompt_len,
                                uint64_t gen_len,
                                uint64_t *out);

/**
 * Computes the memory footprint report for `batch` sequences and stores it
 * as a JSON string in `out`. `policy_json` may be NULL; when given, the
 * report adds per-device byte splits for that placement.
 *
 * # Safety
 * `model` must be a live handle; `policy_json` must be NUL-terminated or
 * NULL; `out` must point to writable memory.
 */
TgStatus tg_footprint_json(const TgModel *model,
                           uint64_t batch,
                           uint64_t prompt_len,
                           uint64_t gen_len,
                           const char *policy_json,
                           char **out);

/**
 * Searches for the best offloading policy and stores the plan as a JSON
 * string in `out`. `options_json` may be NULL for the default search; when
 * given it holds any subset of the search options (`gbs_candidates`,
 * `max_num_gpu_batches`, `latency_ceiling`, `pins`, `cpu_delegation`,
 * `compression`).
 *
 * # Safety
 * `model` and `hardware` must be live handles; `options_json` must be
 * NUL-terminated or NULL; `out` must point to writable memory.
 */
TgStatus tg_plan_json(const TgModel *model,
                      const TgHardware *hardware,
                      uint64_t prompt_len,
                      uint64_t gen_len,
                      const char *options_json,
                      char **out);

/**
 * Simulates one generation block under the given policy and stores the
 * result as a JSON string in `out`. With `allow_oom` false the call fails
 * with `TG_STATUS_INFEASIBLE` when the placement exceeds any memory
 * capacity; with `allow_oom` true the simulation prices it anyway.
 *
 * # Safety
 * `model` and `hardware` must be live handles; `policy_json` must be
 * NUL-terminated; `out` must point to writable memory.
 */
TgStatus tg_simulate_json(const TgModel *model,
                          const TgHardware *hardware,
                          uint64_t prompt_len,
                          uint64_t gen_len,
                          const char *policy_json,
                          bool allow_oom,
                          char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIERGEN_H */
