#ifndef RBSDE_H
#define RBSDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RbsdeStatus {
  RBSDE_STATUS_OK = 0,
  RBSDE_STATUS_NULL_POINTER = 1,
  RBSDE_STATUS_INVALID_ARGUMENT = 2,
  RBSDE_STATUS_CONFIG = 3,
  RBSDE_STATUS_NUMERICAL = 4,
  RBSDE_STATUS_IO = 5,
  RBSDE_STATUS_PANIC = 6,
} RbsdeStatus;

/**
 * Validated problem description.
 */
typedef struct RbsdeScenario RbsdeScenario;

/**
 * Solution of one solve together with its error functionals.
 */
typedef struct RbsdeSolution RbsdeSolution;

/**
 * Monte Carlo estimates and standard errors.
 */
typedef struct RbsdeMetrics {
  double sup_dist_sq;
  double sup_dist_sq_stderr;
  double int_dist_sq;
  double int_dist_sq_stderr;
  double tv_lambda;
  double tv_lambda_stderr;
  double sup_y_sq;
  double sup_y_sq_stderr;
} RbsdeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty if none). The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *rbsde_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rbsde_version(void);

/**
 * Loads a built-in scenario. `steps == 0` keeps the scenario's own step count.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RbsdeStatus rbsde_scenario_from_builtin(const char *name,
                                             uintptr_t steps,
                                             struct RbsdeScenario **out);

/**
 * Parses a scenario from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RbsdeStatus rbsde_scenario_from_toml(const char *toml,
                                          uintptr_t steps,
                                          struct RbsdeScenario **out);

/**
 * # Safety
 * `scenario` must come from this library and not be used afterwards.
 */
void rbsde_scenario_free(struct RbsdeScenario *scenario);

/**
 * Dimension of the constrained component, or 0 for a null handle.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
uintptr_t rbsde_scenario_dim(const struct RbsdeScenario *scenario);

/**
 * Euclidean projection of `y` (length `dim`) onto the closed slice at time `t`.
 *
 * # Safety
 * `y` and `out` must point to `dim` doubles.
 */
enum RbsdeStatus rbsde_project(const struct RbsdeScenario *scenario,
                               double t,
                               const double *y,
                               double *out,
                               uintptr_t dim);

/**
 * Simulates `paths` paths from `seed` and solves at penalty level `n`
 * (`n == 0` solves the unconstrained equation) with a polynomial basis of
 * total degree `basis_degree`.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum RbsdeStatus rbsde_solve(const struct RbsdeScenario *scenario,
                             uintptr_t paths,
                             uint64_t seed,
                             uint64_t n,
                             uintptr_t basis_degree,
                             struct RbsdeSolution **out);

/**
 * # Safety
 * `solution` must come from this library and not be used afterwards.
 */
void rbsde_solution_free(struct RbsdeSolution *solution);

/**
 * Writes the path mean of `Y_0` into `out` (length `dim`).
 *
 * # Safety
 * `out` must point to `dim` doubles.
 */
enum RbsdeStatus rbsde_solution_y0_mean(const struct RbsdeSolution *solution,
                                        double *out,
                                        uintptr_t dim);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum RbsdeStatus rbsde_solution_metrics(const struct RbsdeSolution *solution,
                                        struct RbsdeMetrics *out);

/**
 * Runs a penalty sweep and writes `report.json`, `metrics.csv` and
 * `plotdata/` into `out_dir`.
 *
 * # Safety
 * `n_list` must point to `n_len` integers and `out_dir` be NUL-terminated.
 */
enum RbsdeStatus rbsde_sweep(const struct RbsdeScenario *scenario,
                             const uint64_t *n_list,
                             uintptr_t n_len,
                             uintptr_t paths,
                             uintptr_t replications,
                             uint64_t seed,
                             const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBSDE_H */
