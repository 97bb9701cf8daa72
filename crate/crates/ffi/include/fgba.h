#ifndef FGBA_H
#define FGBA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FgbaStatus {
  FGBA_STATUS_OK = 0,
  FGBA_STATUS_NULL_POINTER = 1,
  FGBA_STATUS_INVALID_ARGUMENT = 2,
  FGBA_STATUS_DIMENSION_MISMATCH = 3,
  FGBA_STATUS_NOT_A_GENERATOR = 4,
  FGBA_STATUS_DEGENERATE = 5,
  FGBA_STATUS_UNSUPPORTED = 6,
  FGBA_STATUS_CONFIG = 7,
  FGBA_STATUS_IO = 8,
  FGBA_STATUS_PANIC = 9,
} FgbaStatus;

/**
 * Opaque sparse generator.
 */
typedef struct FgbaGenerator FgbaGenerator;

/**
 * Opaque fluorescence grid.
 */
typedef struct FgbaGrid FgbaGrid;

/**
 * Rates per generation; fluorescence rates in a.u. per generation.
 */
typedef struct FgbaRates {
  double k_m;
  double k_h;
  double k_o;
  double k_neg_o;
  double k_r;
  double k_neg_r;
  double gamma;
  double beta_f_on;
  double beta_f_partial;
  double beta_f_off;
  double replication_rate;
} FgbaRates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next fgba call on the same thread.
 */
const char *fgba_last_error(void);

/**
 * Published rates.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one `FgbaRates`.
 */
enum FgbaStatus fgba_rates_default(struct FgbaRates *out);

/**
 * Same rates with k_-R = k_R / ratio_r.
 *
 * # Safety
 * `rates` and `out` must be NULL or valid; they may alias.
 */
enum FgbaStatus fgba_rates_with_ratio_r(const struct FgbaRates *rates,
                                        double ratio_r,
                                        struct FgbaRates *out);

/**
 * Grid with edges 0, 1 and then `bins_per_decade` log-spaced bins per
 * decade up to 10^decades.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one pointer.
 */
enum FgbaStatus fgba_grid_new_log(double decades, size_t bins_per_decade, struct FgbaGrid **out);

/**
 * Grid from `n_edges` increasing edges.
 *
 * # Safety
 * `edges` must point to `n_edges` readable doubles; `out` as above.
 */
enum FgbaStatus fgba_grid_new_edges(const double *edges, size_t n_edges, struct FgbaGrid **out);

/**
 * Number of bins; 0 for NULL.
 *
 * # Safety
 * `grid` must be NULL or a live handle.
 */
size_t fgba_grid_len(const struct FgbaGrid *grid);

/**
 * Copies the `len + 1` edges into `out`, which holds `cap` doubles.
 *
 * # Safety
 * `grid` must be a live handle and `out` must hold `cap` doubles.
 */
enum FgbaStatus fgba_grid_edges(const struct FgbaGrid *grid, double *out, size_t cap);

/**
 * # Safety
 * `grid` must be NULL or a handle not yet freed.
 */
void fgba_grid_free(struct FgbaGrid *grid);

/**
 * Grid generator of one mutant with continuous halving replication:
 * A_f + rate·(D⁺_f − I), dimension 5·bins, state index 5·bin + phase.
 *
 * # Safety
 * `rates` and `grid` must be valid; `out` must hold one pointer.
 */
enum FgbaStatus fgba_generator_build_mutant(const struct FgbaRates *rates,
                                            const struct FgbaGrid *grid,
                                            struct FgbaGenerator **out);

/**
 * # Safety
 * `gen` must be NULL or a live handle.
 */
size_t fgba_generator_dim(const struct FgbaGenerator *gen);

/**
 * # Safety
 * `gen` must be NULL or a live handle.
 */
size_t fgba_generator_nnz(const struct FgbaGenerator *gen);

/**
 * Largest |column sum|; NaN for NULL.
 *
 * # Safety
 * `gen` must be NULL or a live handle.
 */
double fgba_generator_max_column_sum_error(const struct FgbaGenerator *gen);

/**
 * Writes the `dim nnz` header and one `row col value` line per entry.
 *
 * # Safety
 * `gen` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum FgbaStatus fgba_generator_write_triplets(const struct FgbaGenerator *gen, const char *path);

/**
 * # Safety
 * `gen` must be NULL or a handle not yet freed.
 */
void fgba_generator_free(struct FgbaGenerator *gen);

/**
 * P(t_end) = exp(M·t_end)·P0 by uniformization with truncation tolerance
 * `tol`. `p0` and `out` both hold `n` = dim doubles and may alias.
 *
 * # Safety
 * `gen` must be a live handle; `p0` and `out` must hold `n` doubles.
 */
enum FgbaStatus fgba_solve(const struct FgbaGenerator *gen,
                           const double *p0,
                           size_t n,
                           double t_end,
                           double tol,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGBA_H */
