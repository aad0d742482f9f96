#ifndef STOCHPROD_H
#define STOCHPROD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SP_COLUMN_R = 0,
  SP_COLUMN_U = 1,
  SP_COLUMN_U_PRIME = 2,
  SP_COLUMN_Z = 3,
  SP_COLUMN_PHI = 4,
  SP_COLUMN_P_MAGNITUDE = 5,
  SP_COLUMN_P_DEMAND_ADJUSTED = 6,
} SpColumn;

typedef enum {
  SP_COST_KIND_QUADRATIC = 0,
  SP_COST_KIND_SCALED_QUADRATIC = 1,
  SP_COST_KIND_SATURATING = 2,
  SP_COST_KIND_CONSTANT = 3,
} SpCostKind;

typedef enum {
  SP_METHOD_RK = 0,
  SP_METHOD_PICARD = 1,
  /**
   * Runs both and keeps the RK solution; the agreement shows up in
   * [`sp_solution_verify`].
   */
  SP_METHOD_BOTH = 2,
} SpMethod;

typedef enum {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  /**
   * Bad parameters, cost, grid or config text.
   */
  SP_STATUS_INVALID_INPUT = 2,
  /**
   * Solver, simulation or other numerical failure.
   */
  SP_STATUS_RUNTIME = 3,
  SP_STATUS_BUFFER_TOO_SMALL = 4,
  SP_STATUS_PANIC = 5,
} SpStatus;

/**
 * Opaque handle to a solved model.
 */
typedef struct SpSolution SpSolution;

typedef struct {
  size_t n_goods;
  double sigma;
  double alpha;
  double radius;
} SpModel;

/**
 * Only the fields used by `kind` are read.
 */
typedef struct {
  SpCostKind kind;
  double c;
  double cap;
  double c0;
  bool allow_test_only;
} SpCost;

typedef struct {
  SpMethod method;
  double dr;
  /**
   * Values `<= 0` mean "stop at the radius".
   */
  double r_stop;
} SpSolverOptions;

typedef struct {
  double dt;
  double t_max;
  size_t n_paths;
  uint64_t seed;
  bool noise_off;
  bool bridge_correction;
} SpSimOptions;

typedef struct {
  size_t n_paths;
  double mean_cost;
  double std_error;
  double fraction_stopped;
  double z_at_y0;
  double z0_boundary;
  double consistency_gap;
} SpMonteCarlo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Solves the radial equation for the given model, cost and grid.
 *
 * # Safety
 * `model`, `cost` and `solver` must be valid for reads; `out` must be valid
 * for a pointer write. On success `*out` owns a handle to be released with
 * [`sp_solution_free`].
 */
SpStatus sp_solution_new(const SpModel *model,
                         const SpCost *cost,
                         const SpSolverOptions *solver,
                         SpSolution **out);

/**
 * Like [`sp_solution_new`], reading everything from a TOML config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be valid for a
 * pointer write.
 */
SpStatus sp_solution_from_toml(const char *toml, SpSolution **out);

/**
 * # Safety
 * `handle` must be null or come from this library and not be freed twice.
 */
void sp_solution_free(SpSolution *handle);

/**
 * Number of grid nodes, 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t sp_solution_len(const SpSolution *handle);

/**
 * Boundary value `Z0 = z(R)`.
 *
 * # Safety
 * `handle` must be a live handle and `out` valid for a write.
 */
SpStatus sp_solution_z0(const SpSolution *handle, double *out);

/**
 * Copies one column of the solution table into `buf`, which must hold at
 * least [`sp_solution_len`] values.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
SpStatus sp_solution_column(const SpSolution *handle, SpColumn column, double *buf, size_t len);

/**
 * Value function at the state `y` (length `n`); states on or outside the
 * sphere give `Z0`.
 *
 * # Safety
 * `y` must be valid for `n` reads and `out` for a write.
 */
SpStatus sp_solution_value(const SpSolution *handle, const double *y, size_t n, double *out);

/**
 * Optimal production rates at `y` (length `n`), written to `out` (length
 * `n`).
 *
 * # Safety
 * `y` must be valid for `n` reads and `out` for `n` writes.
 */
SpStatus sp_solution_policy(const SpSolution *handle, const double *y, size_t n, double *out);

/**
 * Runs the invariant checks. `*pass` is set even when some checks fail;
 * the names of failed checks are then available from
 * [`sp_last_error_message`].
 *
 * # Safety
 * `handle` must be a live handle and `pass` valid for a write.
 */
SpStatus sp_solution_verify(const SpSolution *handle, bool *pass);

/**
 * Monte Carlo estimate of the expected cost from `y0` (length `n`).
 *
 * # Safety
 * `opts` must be valid for reads, `y0` for `n` reads and `out` for a write.
 */
SpStatus sp_solution_monte_carlo(const SpSolution *handle,
                                 const SpSimOptions *opts,
                                 const double *y0,
                                 size_t n,
                                 SpMonteCarlo *out);

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating NUL.
 */
size_t sp_last_error_length(void);

/**
 * Copies the last error message on this thread into `buf` as a
 * NUL-terminated string. Needs `sp_last_error_length() + 1` bytes.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
SpStatus sp_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STOCHPROD_H */
