#ifndef POISSON_STOP_H
#define POISSON_STOP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  /**
   * A string argument is not valid UTF-8.
   */
  PS_STATUS_INVALID_STRING = 2,
  /**
   * The problem could not be read, parsed or constructed.
   */
  PS_STATUS_INVALID_PROBLEM = 3,
  /**
   * The problem fails its standing assumptions.
   */
  PS_STATUS_ASSUMPTION_FAILED = 4,
  PS_STATUS_SOLVER = 5,
  PS_STATUS_SIMULATION = 6,
  PS_STATUS_INVALID_ARGUMENT = 7,
  PS_STATUS_BUFFER_TOO_SMALL = 8,
  PS_STATUS_PANIC = 99,
} PsStatus;

typedef enum PsSpacing {
  /**
   * Chosen from the problem's interval and endpoint kinds.
   */
  PS_SPACING_AUTO = 0,
  PS_SPACING_UNIFORM = 1,
  PS_SPACING_LOGARITHMIC = 2,
} PsSpacing;

typedef struct PsProblem PsProblem;

typedef struct PsValueFunction PsValueFunction;

typedef struct PsSolveOptions {
  size_t grid_nodes;
  enum PsSpacing spacing;
  double tol;
  size_t max_iterations;
  /**
   * Switch to policy iteration after `warmup` sweeps.
   */
  bool accelerated;
  size_t warmup;
  /**
   * Downgrade failed assumptions to warnings.
   */
  bool acknowledge;
} PsSolveOptions;

typedef struct PsEstimate {
  double direct_mean;
  double direct_std_error;
  double time_changed_mean;
  double time_changed_std_error;
} PsEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *ps_last_error(void);

/**
 * Static version string.
 */
const char *ps_version(void);

/**
 * Parses a problem from its JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PsStatus ps_problem_from_json(const char *json, struct PsProblem **out);

/**
 * Reads a problem file, or a bundled example when no such file exists.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PsStatus ps_problem_load(const char *path, struct PsProblem **out);

/**
 * # Safety
 * `p` must be null or a handle from `ps_problem_*` not yet freed.
 */
void ps_problem_free(struct PsProblem *p);

/**
 * Problem as JSON; release with `ps_string_free`. Null on failure.
 *
 * # Safety
 * `p` must be a live problem handle.
 */
char *ps_problem_to_json(const struct PsProblem *p);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void ps_string_free(char *s);

struct PsSolveOptions ps_solve_options_default(void);

/**
 * Value iteration on a grid built from the options.
 *
 * # Safety
 * `p` must be a live problem handle, `opts` null (defaults) or valid, and
 * `out` writable.
 */
enum PsStatus ps_solve(const struct PsProblem *p,
                       const struct PsSolveOptions *opts,
                       struct PsValueFunction **out);

/**
 * # Safety
 * `v` must be null or a handle from `ps_solve` not yet freed.
 */
void ps_value_free(struct PsValueFunction *v);

/**
 * Interpolated value at `x`.
 *
 * # Safety
 * `v` must be a live value handle and `out` writable.
 */
enum PsStatus ps_value_eval(const struct PsValueFunction *v, double x, double *out);

/**
 * Number of grid nodes; zero for a null handle.
 *
 * # Safety
 * `v` must be null or a live value handle.
 */
size_t ps_value_len(const struct PsValueFunction *v);

/**
 * Copies nodes and values into caller buffers of length `len`; either
 * buffer may be null to skip it.
 *
 * # Safety
 * Non-null buffers must hold at least `len` doubles.
 */
enum PsStatus ps_value_copy(const struct PsValueFunction *v,
                            double *nodes,
                            double *values,
                            size_t len);

/**
 * # Safety
 * `v` must be null or a live value handle.
 */
bool ps_value_converged(const struct PsValueFunction *v);

/**
 * Iteration report as JSON; release with `ps_string_free`. Null on failure.
 *
 * # Safety
 * `v` must be a live value handle.
 */
char *ps_value_report_json(const struct PsValueFunction *v);

/**
 * Direct and time-changed Monte Carlo estimates of the first-arrival value
 * at `x`. A non-positive `dt` keeps the default step.
 *
 * # Safety
 * `p` must be a live problem handle and `out` writable.
 */
enum PsStatus ps_estimate_first_arrival(const struct PsProblem *p,
                                        double x,
                                        size_t n_paths,
                                        double dt,
                                        uint64_t seed,
                                        struct PsEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POISSON_STOP_H */
