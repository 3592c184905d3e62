#ifndef JMDP_H
#define JMDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum JmdpStatus {
  JMDP_STATUS_OK = 0,
  JMDP_STATUS_INVALID_INPUT = 1,
  JMDP_STATUS_INVALID_QUERY = 2,
  JMDP_STATUS_INVALID_CONFIG = 3,
  JMDP_STATUS_SCHEMA = 4,
  JMDP_STATUS_INVALID_FEATURES = 5,
  JMDP_STATUS_ASSUMPTION_VIOLATED = 6,
  JMDP_STATUS_NOT_APPLICABLE = 7,
  JMDP_STATUS_SIZE_LIMIT = 8,
  JMDP_STATUS_IO = 9,
  JMDP_STATUS_NULL_POINTER = 10,
  JMDP_STATUS_BUFFER_TOO_SMALL = 11,
  JMDP_STATUS_PANIC = 12,
} JmdpStatus;

/**
 * Environment handle.
 */
typedef struct JmdpEnv JmdpEnv;

/**
 * Second-order moment collection handle.
 */
typedef struct JmdpMoments JmdpMoments;

/**
 * Policy handle.
 */
typedef struct JmdpPolicy JmdpPolicy;

/**
 * Summary of a fixed-point run.
 */
typedef struct JmdpJipeInfo {
  size_t iterations;
  /**
   * 1 when the residual certificate was reached.
   */
  int32_t certified;
  double certified_error_bound;
} JmdpJipeInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t jmdp_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *jmdp_version(void);

/**
 * Parses an environment document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum JmdpStatus jmdp_env_from_json(const char *json, struct JmdpEnv **out);

/**
 * Coupled-reward chain with `num_states` states.
 *
 * # Safety
 * `out` must be writable.
 */
enum JmdpStatus jmdp_env_crc(size_t num_states, double gamma, struct JmdpEnv **out);

/**
 * Windy gridworld with the goal at `(goal_col, goal_row)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum JmdpStatus jmdp_env_wgw(size_t width,
                             size_t height,
                             size_t goal_col,
                             size_t goal_row,
                             double p_wind,
                             double gamma,
                             struct JmdpEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from this library, not yet freed.
 */
void jmdp_env_free(struct JmdpEnv *env);

/**
 * Number of states, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t jmdp_env_num_states(const struct JmdpEnv *env);

/**
 * Number of actions, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t jmdp_env_num_actions(const struct JmdpEnv *env);

/**
 * Uniform policy over the environment's actions.
 *
 * # Safety
 * `env` must be a live handle; `out` must be writable.
 */
enum JmdpStatus jmdp_policy_uniform(const struct JmdpEnv *env, struct JmdpPolicy **out);

/**
 * Parses a policy document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum JmdpStatus jmdp_policy_from_json(const char *json, struct JmdpPolicy **out);

/**
 * # Safety
 * `policy` must be null or a live handle.
 */
void jmdp_policy_free(struct JmdpPolicy *policy);

/**
 * Second-order fixed-point iteration from zero. `info` may be null.
 *
 * # Safety
 * Handles must be live; `out` must be writable; `info` null or writable.
 */
enum JmdpStatus jmdp_jipe2(const struct JmdpEnv *env,
                           const struct JmdpPolicy *policy,
                           double epsilon,
                           size_t max_iter,
                           struct JmdpMoments **out,
                           struct JmdpJipeInfo *info);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
void jmdp_moments_free(struct JmdpMoments *m);

/**
 * Number of state-action pairs, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t jmdp_moments_nx(const struct JmdpMoments *m);

/**
 * Copies the first moments (length `nx`) into `buf`.
 *
 * # Safety
 * `m` must be live; `buf` must hold `len` doubles.
 */
enum JmdpStatus jmdp_moments_mu(const struct JmdpMoments *m, double *buf, size_t len);

/**
 * Copies the second moments (row-major, length `nx * nx`) into `buf`.
 *
 * # Safety
 * `m` must be live; `buf` must hold `len` doubles.
 */
enum JmdpStatus jmdp_moments_sigma(const struct JmdpMoments *m, double *buf, size_t len);

/**
 * Mean and variance of the gap between actions `a` and `b` at state `s`.
 *
 * # Safety
 * Handles must be live; `mean` and `variance` must be writable.
 */
enum JmdpStatus jmdp_gap_stats(const struct JmdpMoments *m,
                               const struct JmdpEnv *env,
                               size_t s,
                               size_t a,
                               size_t b,
                               double *mean,
                               double *variance);

/**
 * One-sided Chebyshev bound `variance / (variance + mean^2)`; needs `mean > 0`.
 *
 * # Safety
 * `out` must be writable.
 */
enum JmdpStatus jmdp_cantelli_bound(double mean, double variance, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JMDP_H */
