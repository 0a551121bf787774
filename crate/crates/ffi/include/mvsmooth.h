#ifndef MVSMOOTH_H
#define MVSMOOTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MvsStatus {
  MVS_STATUS_OK = 0,
  MVS_STATUS_NULL_POINTER = 1,
  MVS_STATUS_INVALID_ARGUMENT = 2,
  MVS_STATUS_INVALID_GRAPH = 3,
  MVS_STATUS_NOT_POSITIVE_DEFINITE = 4,
  MVS_STATUS_NUMERICAL = 5,
  MVS_STATUS_IO = 6,
  MVS_STATUS_PANIC = 7,
} MvsStatus;

typedef enum MvsPrior {
  MVS_PRIOR_ICAR = 0,
  MVS_PRIOR_LCAR = 1,
  MVS_PRIOR_LJCAR = 2,
} MvsPrior;

/**
 * Opaque areal graph.
 */
typedef struct MvsGraph MvsGraph;

/**
 * Totals of a smoothing report.
 */
typedef struct MvsTotals {
  double rmss_total;
  double rsp_sum;
  double sp;
} MvsTotals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t mvs_last_error_message(char *buf, size_t len);

/**
 * Rook-adjacency lattice with `rows * cols` areas.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MvsStatus mvs_graph_lattice(size_t rows, size_t cols, struct MvsGraph **out);

/**
 * The bundled 47-province adjacency.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MvsStatus mvs_graph_spain47(struct MvsGraph **out);

/**
 * Graph from 1-based edge endpoints `from[k] -- to[k]`.
 *
 * # Safety
 * `from` and `to` must hold `num_edges` elements; `out` must be valid for writes.
 */
enum MvsStatus mvs_graph_from_edges(const size_t *from,
                                    const size_t *to,
                                    size_t num_edges,
                                    size_t num_areas,
                                    struct MvsGraph **out);

/**
 * Reads a whitespace- or comma-separated edge-list file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum MvsStatus mvs_graph_read_edge_list(const char *path, struct MvsGraph **out);

/**
 * Releases a graph. Null is ignored.
 *
 * # Safety
 * `graph` must come from one of the constructors and not be used afterwards.
 */
void mvs_graph_free(struct MvsGraph *graph);

/**
 * Number of areas, or 0 for a null graph.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t mvs_graph_num_areas(const struct MvsGraph *graph);

/**
 * MultiTCV of the prior `prior` (an `MvsPrior` value) with `num_diseases`×`num_diseases` covariance
 * `sigma_b` (row-major). `lambdas` holds 0 (iCAR), 1 (LCAR) or
 * `num_diseases` (LjCAR) values. `per_area`, when not null, receives one
 * value per area.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `total` must be valid for writes.
 */
enum MvsStatus mvs_tcv(const struct MvsGraph *graph,
                       uint32_t prior,
                       const double *lambdas,
                       size_t num_lambdas,
                       const double *sigma_b,
                       size_t num_diseases,
                       double *total,
                       double *per_area);

/**
 * corr(η⁽¹⁾, η⁽²⁾) of the shared-component Poisson-Gamma model.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MvsStatus mvs_pg_eta_correlation(double a1, double a2, double c, double b, double *out);

/**
 * Posterior relative risk `(a + c + O)/(b + E)` and data weight `w` for
 * disease 0 or 1.
 *
 * # Safety
 * `mean` and `weight` must be valid for writes.
 */
enum MvsStatus mvs_pg_relative_risk(double a1,
                                    double a2,
                                    double c,
                                    double b,
                                    size_t disease,
                                    double observed,
                                    double expected,
                                    double *mean,
                                    double *weight);

/**
 * Rate-scale posterior mean and shrinkage factor `1 − w` for disease 0 or 1.
 *
 * # Safety
 * `mean_rate` and `one_minus_w` must be valid for writes.
 */
enum MvsStatus mvs_pg_posterior_rate(double a1,
                                     double a2,
                                     double c,
                                     double b,
                                     size_t disease,
                                     double observed,
                                     double population,
                                     double rbar,
                                     double *mean_rate,
                                     double *one_minus_w);

/**
 * Smoothing metrics of posterior mean rates against crude rates.
 *
 * `post` and `counts` are `num_diseases`×`num_areas` row-major; `population`
 * has `num_areas` entries. Per-disease outputs (`rmss`, `max_rmss`, `rsp`,
 * `rbar`) may each be null or hold `num_diseases` values. `weighted`
 * selects the population-weighted average rate.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `totals` must be valid for writes.
 */
enum MvsStatus mvs_smoothing_report(const double *post,
                                    const uint64_t *counts,
                                    const uint64_t *population,
                                    size_t num_diseases,
                                    size_t num_areas,
                                    double rate_scale,
                                    bool weighted,
                                    struct MvsTotals *totals,
                                    double *rmss,
                                    double *max_rmss,
                                    double *rsp,
                                    double *rbar);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVSMOOTH_H */
