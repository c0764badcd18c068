/* C interface to the jumpflow simulator and diagnostics library. */

#ifndef JUMPFLOW_H
#define JUMPFLOW_H

/* Generated by cbindgen from the jumpflow-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call. Matches the command line
 * exit codes where the same failure exists there.
 */
typedef enum JfStatus {
  JF_STATUS_OK = 0,
  JF_STATUS_NULL_ARGUMENT = 1,
  JF_STATUS_CONFIG_ERROR = 2,
  JF_STATUS_CHECK_FAILED = 3,
  JF_STATUS_NUMERIC_ERROR = 4,
  JF_STATUS_PANIC = 5,
  JF_STATUS_BUFFER_TOO_SMALL = 6,
} JfStatus;

/**
 * Validated model handle.
 */
typedef struct JfModel JfModel;

/**
 * Simulated path handle. Keeps its own copy of the model, so it stays
 * usable after the model handle is freed.
 */
typedef struct JfPath JfPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library as a static NUL-terminated string.
 */
const char *jf_version(void);

/**
 * Message of the most recent failure on this thread; empty if none yet.
 */
const char *jf_last_error(void);

/**
 * Release a string returned through a `char **` out parameter.
 *
 * # Safety
 * `s` must be null or a pointer produced by this library.
 */
void jf_string_free(char *s);

/**
 * Build a model from config text (same format the command line reads).
 *
 * # Safety
 * `text` must be NUL-terminated; `out` must be a valid pointer.
 */
enum JfStatus jf_model_from_toml(const char *text, struct JfModel **out);

/**
 * Build one of the built-in example models by name.
 *
 * # Safety
 * `name` must be NUL-terminated; `out` must be a valid pointer.
 */
enum JfStatus jf_model_gallery(const char *name, struct JfModel **out);

/**
 * # Safety
 * `model` must be null or a pointer from a model constructor.
 */
void jf_model_free(struct JfModel *model);

/**
 * Continuous dimension; 0 if `model` is null.
 *
 * # Safety
 * `model` must be null or a valid model handle.
 */
size_t jf_model_dim(const struct JfModel *model);

/**
 * Number of flow regimes; 0 if `model` is null.
 *
 * # Safety
 * `model` must be null or a valid model handle.
 */
size_t jf_model_num_flows(const struct JfModel *model);

/**
 * Jump intensity; NaN if `model` is null.
 *
 * # Safety
 * `model` must be null or a valid model handle.
 */
double jf_model_jump_rate(const struct JfModel *model);

/**
 * Copy the model's config hash into `buf` as a NUL-terminated string.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes.
 */
enum JfStatus jf_model_hash(const struct JfModel *model, char *buf, size_t cap);

/**
 * Evaluate the standing conditions on `probes` low-discrepancy probe pairs.
 * Writes whether all of them hold to `all_pass` and, when `json` is not
 * null, the full report. Returns `CHECK_FAILED` when a condition fails;
 * the out parameters are still written in that case.
 *
 * # Safety
 * Pointer arguments must be null or valid.
 */
enum JfStatus jf_model_check_json(const struct JfModel *model,
                                  size_t probes,
                                  double tol,
                                  bool *all_pass,
                                  char **json);

/**
 * Simulate `steps` jumps. `y0` may be null to start at the model's
 * reference point; `flow` 0 also means the default regime 1. The random
 * stream is derived from (`seed`, `stream`).
 *
 * # Safety
 * `y0` must be null or point to `y0_len` doubles; `out` must be valid.
 */
enum JfStatus jf_simulate_steps(const struct JfModel *model,
                                const double *y0,
                                size_t y0_len,
                                size_t flow,
                                size_t steps,
                                uint64_t seed,
                                uint64_t stream,
                                struct JfPath **out);

/**
 * Simulate past the time `horizon`. Arguments as in `jf_simulate_steps`.
 *
 * # Safety
 * `y0` must be null or point to `y0_len` doubles; `out` must be valid.
 */
enum JfStatus jf_simulate_horizon(const struct JfModel *model,
                                  const double *y0,
                                  size_t y0_len,
                                  size_t flow,
                                  double horizon,
                                  uint64_t seed,
                                  uint64_t stream,
                                  struct JfPath **out);

/**
 * # Safety
 * `path` must be null or a pointer from a simulate call.
 */
void jf_path_free(struct JfPath *path);

/**
 * Number of records (steps + 1); 0 if `path` is null.
 *
 * # Safety
 * `path` must be null or a valid path handle.
 */
size_t jf_path_len(const struct JfPath *path);

/**
 * Continuous dimension of the path's states; 0 if `path` is null.
 *
 * # Safety
 * `path` must be null or a valid path handle.
 */
size_t jf_path_dim(const struct JfPath *path);

/**
 * Time of the last jump; NaN if `path` is null.
 *
 * # Safety
 * `path` must be null or a valid path handle.
 */
double jf_path_last_time(const struct JfPath *path);

/**
 * Copy record `k`: post-jump coordinates into `y` (`y_cap` >= dim), the
 * regime into `flow`, and the jump time into `tau`. Each out pointer may
 * be null to skip that field.
 *
 * # Safety
 * `y` must be null or point to `y_cap` writable doubles.
 */
enum JfStatus jf_path_record(const struct JfPath *path,
                             size_t k,
                             double *y,
                             size_t y_cap,
                             size_t *flow,
                             double *tau);

/**
 * Evaluate the interpolated continuous-time state at `t` (before the last
 * jump). `y` and `flow` may each be null to skip that field.
 *
 * # Safety
 * `y` must be null or point to `y_cap` writable doubles.
 */
enum JfStatus jf_path_state_at(const struct JfPath *path,
                               double t,
                               double *y,
                               size_t y_cap,
                               size_t *flow);

/**
 * Integrate a named observable (y, cosy, expny, idx1) along the continuous
 * path over [t0, t1] to tolerance `tol`.
 *
 * # Safety
 * `g` must be NUL-terminated; `out` must be valid.
 */
enum JfStatus jf_path_observable_integral(const struct JfPath *path,
                                          const char *g,
                                          double t0,
                                          double t1,
                                          double tol,
                                          double *out);

/**
 * Run the replica fluctuation diagnostics for a named observable and hand
 * back the full report as JSON. The observable is centered internally
 * from its own auxiliary run. `y0` may be null for the default start.
 *
 * # Safety
 * `y0` must be null or point to `y0_len` doubles; `g` NUL-terminated;
 * `json` must be valid.
 */
enum JfStatus jf_lil_json(const struct JfModel *model,
                          const char *g,
                          const double *y0,
                          size_t y0_len,
                          size_t flow,
                          double horizon,
                          size_t replicas,
                          uint64_t seed,
                          bool full_traces,
                          char **json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JUMPFLOW_H */
