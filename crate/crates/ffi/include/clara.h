#ifndef CLARA_H
#define CLARA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum ClaraStatus {
  CLARA_STATUS_OK = 0,
  CLARA_STATUS_NULL_POINTER = 1,
  CLARA_STATUS_INVALID_ARGUMENT = 2,
  CLARA_STATUS_CONFIG = 3,
  CLARA_STATUS_CONTRACT = 4,
  CLARA_STATUS_IO = 5,
  CLARA_STATUS_MALFORMED = 6,
  CLARA_STATUS_INTERNAL = 7,
  CLARA_STATUS_PANIC = 8,
} ClaraStatus;

/**
 * Heuristic allocator.
 */
typedef struct ClaraAllocator ClaraAllocator;

/**
 * Simulator instance.
 */
typedef struct ClaraEnv ClaraEnv;

/**
 * Trained policy loaded from a checkpoint, with its safety layer.
 */
typedef struct ClaraPolicy ClaraPolicy;

/**
 * One simulated slot.
 */
typedef struct ClaraStepResult {
  /**
   * Throughput, kilobits.
   */
  double reward;
  /**
   * Per-slice dissatisfaction ratio in [0, 1].
   */
  double dissatisfaction[3];
  /**
   * Per-slice mean latency, seconds.
   */
  double latency[3];
  /**
   * User counts after the slot.
   */
  uint32_t next_counts[3];
} ClaraStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *clara_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *clara_last_error_message(void);

/**
 * Creates an environment. `config_toml` is a run configuration whose `[env]`
 * table is used; NULL or an empty string selects the defaults.
 *
 * # Safety
 * `config_toml` must be NULL or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum ClaraStatus clara_env_new(const char *config_toml, uint64_t seed, struct ClaraEnv **out);

/**
 * # Safety
 * `env` must be NULL or a handle from `clara_env_new` not yet freed.
 */
void clara_env_free(struct ClaraEnv *env);

/**
 * Starts a new episode; writes the initial user counts to `counts_out[3]`.
 *
 * # Safety
 * `env` must be a live handle; `counts_out` must hold 3 values.
 */
enum ClaraStatus clara_env_reset(struct ClaraEnv *env, uint64_t seed, uint32_t *counts_out);

/**
 * Current user counts.
 *
 * # Safety
 * `env` must be a live handle; `counts_out` must hold 3 values.
 */
enum ClaraStatus clara_env_observe(const struct ClaraEnv *env, uint32_t *counts_out);

/**
 * Bandwidth budget per slot, kilobits.
 *
 * # Safety
 * `env` must be a live handle; `out` must be valid.
 */
enum ClaraStatus clara_env_total_bandwidth(const struct ClaraEnv *env, double *out);

/**
 * Simulates one slot under `action_kb[3]` (non-negative, summing to at
 * most the budget).
 *
 * # Safety
 * `env` must be a live handle; `action_kb` must hold 3 values; `out` must be valid.
 */
enum ClaraStatus clara_env_step(struct ClaraEnv *env,
                                const double *action_kb,
                                struct ClaraStepResult *out);

/**
 * Creates one of the allocators `one_third`, `user_number`,
 * `packet_number` or `traffic_demand`.
 *
 * # Safety
 * `kind` must be a NUL-terminated string; `out` must be valid.
 */
enum ClaraStatus clara_allocator_new(const char *kind, struct ClaraAllocator **out);

/**
 * # Safety
 * `alloc` must be NULL or a handle from `clara_allocator_new` not yet freed.
 */
void clara_allocator_free(struct ClaraAllocator *alloc);

/**
 * Allocation for `env`'s upcoming slot, written to `out_kb[3]`.
 *
 * # Safety
 * Both handles must be live; `out_kb` must hold 3 values.
 */
enum ClaraStatus clara_allocator_allocate(const struct ClaraAllocator *alloc,
                                          const struct ClaraEnv *env,
                                          double *out_kb);

/**
 * Loads a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum ClaraStatus clara_policy_load(const char *path, struct ClaraPolicy **out);

/**
 * # Safety
 * `policy` must be NULL or a handle from `clara_policy_load` not yet freed.
 */
void clara_policy_free(struct ClaraPolicy *policy);

/**
 * Deterministic allocation for user counts `counts[3]`, written to `out_kb[3]`.
 *
 * # Safety
 * `policy` must be live; `counts` and `out_kb` must hold 3 values.
 */
enum ClaraStatus clara_policy_act(const struct ClaraPolicy *policy,
                                  const uint32_t *counts,
                                  double *out_kb);

/**
 * `total * softmax(logits)` over `n` entries.
 *
 * # Safety
 * `logits` and `out` must each hold `n` values.
 */
enum ClaraStatus clara_softmax_project(const double *logits,
                                       uintptr_t n,
                                       double total,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLARA_H */
