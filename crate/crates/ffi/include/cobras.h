#ifndef COBRAS_H
#define COBRAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum CobrasStatus {
  COBRAS_STATUS_OK = 0,
  COBRAS_STATUS_NULL_POINTER = 1,
  COBRAS_STATUS_INVALID_ARGUMENT = 2,
  COBRAS_STATUS_PARSE_ERROR = 3,
  COBRAS_STATUS_SOLVER_FAILED = 4,
  COBRAS_STATUS_NOT_APPLICABLE = 5,
  COBRAS_STATUS_PANIC = 6,
} CobrasStatus;

/**
 * Estimate handle (grid or gridless).
 */
typedef struct CobrasEstimate CobrasEstimate;

/**
 * Array geometry handle.
 */
typedef struct CobrasGeometry CobrasGeometry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *cobras_last_error_message(void);

/**
 * Parses a geometry document
 * `{"subarrays": [[...], ...], "displacements": [...], "offsets": [[re, im], ...]}`
 * with one displacement and one offset per subarray after the first.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum CobrasStatus cobras_geometry_from_json(const char *json, struct CobrasGeometry **out);

/**
 * # Safety
 * `geom` must be null or a handle from [`cobras_geometry_from_json`] that
 * has not been freed.
 */
void cobras_geometry_free(struct CobrasGeometry *geom);

/**
 * # Safety
 * `geom` must be a live geometry handle and `out` a valid pointer.
 */
enum CobrasStatus cobras_geometry_num_sensors(const struct CobrasGeometry *geom, uintptr_t *out);

/**
 * # Safety
 * `geom` must be a live geometry handle and `out` a valid pointer.
 */
enum CobrasStatus cobras_geometry_num_subarrays(const struct CobrasGeometry *geom, uintptr_t *out);

/**
 * Regularisation heuristic for noise standard deviation `sigma`.
 *
 * # Safety
 * `geom` must be a live geometry handle and `out` a valid pointer.
 */
enum CobrasStatus cobras_select_lambda(double sigma,
                                       const struct CobrasGeometry *geom,
                                       double *out);

/**
 * Grid-based estimate from a sample covariance (`m x m`, row-major,
 * interleaved real and imaginary parts) on a uniform grid of `grid_size`
 * points. A non-positive `tolerance` selects the library default (1e-7);
 * 1e-5 is usually enough. `seed` drives the padding of missing peaks.
 *
 * # Safety
 * `geom` must be a live geometry handle, `covariance` must point to
 * `2 * m * m` doubles and `out` must be a valid pointer.
 */
enum CobrasStatus cobras_estimate_grid(const struct CobrasGeometry *geom,
                                       const double *covariance,
                                       uintptr_t m,
                                       uintptr_t snapshots,
                                       uintptr_t grid_size,
                                       double lambda,
                                       uintptr_t num_sources,
                                       double tolerance,
                                       uint64_t seed,
                                       struct CobrasEstimate **out);

/**
 * Gridless estimate from a sample covariance; see [`cobras_estimate_grid`]
 * for the layout. Fails with `NOT_APPLICABLE` when the subarrays do not
 * share a common baseline.
 *
 * # Safety
 * Same requirements as [`cobras_estimate_grid`].
 */
enum CobrasStatus cobras_estimate_gridless(const struct CobrasGeometry *geom,
                                           const double *covariance,
                                           uintptr_t m,
                                           uintptr_t snapshots,
                                           double lambda,
                                           uintptr_t num_sources,
                                           double tolerance,
                                           uint64_t seed,
                                           struct CobrasEstimate **out);

/**
 * # Safety
 * `est` must be null or a live estimate handle.
 */
void cobras_estimate_free(struct CobrasEstimate *est);

/**
 * # Safety
 * `est` must be a live estimate handle and `out` a valid pointer.
 */
enum CobrasStatus cobras_estimate_num_sources(const struct CobrasEstimate *est, uintptr_t *out);

/**
 * Copies the estimated frequencies into `buf`, which must hold at least
 * as many entries as [`cobras_estimate_num_sources`] reports.
 *
 * # Safety
 * `est` must be a live estimate handle and `buf` must point to `len`
 * writable doubles.
 */
enum CobrasStatus cobras_estimate_frequencies(const struct CobrasEstimate *est,
                                              double *buf,
                                              uintptr_t len);

/**
 * Copies the shift vectors (source-major, interleaved `re, im`, `P`
 * entries per source) into `buf` of `len` doubles.
 *
 * # Safety
 * `est` must be a live estimate handle and `buf` must point to `len`
 * writable doubles.
 */
enum CobrasStatus cobras_estimate_shifts(const struct CobrasEstimate *est,
                                         double *buf,
                                         uintptr_t len);

/**
 * JSON document describing the estimate; release with
 * [`cobras_string_free`].
 *
 * # Safety
 * `est` must be a live estimate handle and `out` a valid pointer.
 */
enum CobrasStatus cobras_estimate_to_json(const struct CobrasEstimate *est, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library that has not been
 * freed.
 */
void cobras_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COBRAS_H */
