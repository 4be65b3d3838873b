#ifndef GRIDFM_H
#define GRIDFM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `Validation` and `Numeric` match the CLI exit codes.
 */
typedef enum GridfmStatus {
  GRIDFM_STATUS_OK = 0,
  GRIDFM_STATUS_NULL_POINTER = 1,
  GRIDFM_STATUS_VALIDATION = 2,
  GRIDFM_STATUS_NUMERIC = 3,
  GRIDFM_STATUS_IO = 4,
  GRIDFM_STATUS_INTERNAL = 5,
} GridfmStatus;

/**
 * Reduced bus/branch grid.
 */
typedef struct GridfmGrid GridfmGrid;

/**
 * Trained reconstruction model.
 */
typedef struct GridfmModel GridfmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread. Valid until the next call
 * into the library from the same thread.
 */
const char *gridfm_last_error(void);

/**
 * Parse MATPOWER-style case text and reduce it to a grid.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GridfmStatus gridfm_grid_from_case_text(const char *text, struct GridfmGrid **out);

/**
 * # Safety
 * `grid` must come from [`gridfm_grid_from_case_text`] and not be used
 * afterwards. Null is ignored.
 */
void gridfm_grid_free(struct GridfmGrid *grid);

/**
 * Bus count, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t gridfm_grid_n_buses(const struct GridfmGrid *grid);

/**
 * Branch count, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t gridfm_grid_n_branches(const struct GridfmGrid *grid);

/**
 * Newton-Raphson AC power flow from a flat start. The final iterate is
 * written to `out_state` even when the solve does not converge, in which
 * case `Numeric` is returned.
 *
 * # Safety
 * `out_state` must hold `4 * n_buses` doubles; `out_iterations` and
 * `out_residual` may be null.
 */
enum GridfmStatus gridfm_solve_ac(const struct GridfmGrid *grid,
                                  double tol,
                                  size_t max_iter,
                                  double *out_state,
                                  size_t *out_iterations,
                                  double *out_residual);

/**
 * Linear DC power flow.
 *
 * # Safety
 * `out_state` must hold `4 * n_buses` doubles.
 */
enum GridfmStatus gridfm_solve_dc(const struct GridfmGrid *grid, double *out_state);

/**
 * Infinity norm of the nodal balance mismatch of `state` on `grid`.
 *
 * # Safety
 * `state` must hold `4 * n_buses` doubles; `out` must be valid.
 */
enum GridfmStatus gridfm_mismatch_inf_norm(const struct GridfmGrid *grid,
                                           const double *state,
                                           double *out);

/**
 * Load a JSON checkpoint. The content hash is verified.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GridfmStatus gridfm_model_load(const char *path, struct GridfmModel **out);

/**
 * # Safety
 * `model` must come from [`gridfm_model_load`] and not be used afterwards.
 * Null is ignored.
 */
void gridfm_model_free(struct GridfmModel *model);

/**
 * Neural power flow: the grid's setpoints are the knowns, the model fills
 * in the rest.
 *
 * # Safety
 * `out_state` must hold `4 * n_buses` doubles; `out_residual` may be null.
 */
enum GridfmStatus gridfm_neural_pf(const struct GridfmModel *model,
                                   const struct GridfmGrid *grid,
                                   double *out_state,
                                   double *out_residual);

/**
 * Number of `k`-element contingencies among `n` candidates.
 *
 * # Safety
 * `out` must be valid.
 */
enum GridfmStatus gridfm_contingency_count(uint64_t n, uint64_t k, uint64_t *out);

/**
 * Random feature mask: `out_bits[4 * bus + feature]` is 1 when hidden.
 *
 * # Safety
 * `out_bits` must hold `4 * n_buses` bytes.
 */
enum GridfmStatus gridfm_mask_random(size_t n_buses,
                                     double alpha,
                                     uint64_t seed,
                                     uint8_t *out_bits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDFM_H */
