#ifndef FLOWFAIR_H
#define FLOWFAIR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum FfStatus {
  FF_STATUS_OK = 0,
  FF_STATUS_NULL_POINTER = 1,
  FF_STATUS_INVALID_ARGUMENT = 2,
  FF_STATUS_IO = 3,
  FF_STATUS_PARSE = 4,
  FF_STATUS_MODEL = 5,
  FF_STATUS_METRIC = 6,
  FF_STATUS_PANIC = 7,
} FfStatus;

/**
 * Distance deterrence for the gravity model.
 */
typedef enum FfDeterrence {
  FF_DETERRENCE_POWER = 0,
  FF_DETERRENCE_EXPONENTIAL = 1,
} FfDeterrence;

/**
 * Opaque sparse flow matrix.
 */
typedef struct FfFlowMatrix FfFlowMatrix;

/**
 * Opaque zone set.
 */
typedef struct FfTessellation FfTessellation;

/**
 * Gravity parameters, `p(j|i) ~ pop_j^gamma * f(d_ij)`.
 */
typedef struct FfGravityParams {
  double gamma;
  double beta;
  enum FfDeterrence deterrence;
} FfGravityParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *ff_last_error(void);

/**
 * Loads a zones CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FfStatus ff_tessellation_load(const char *path, struct FfTessellation **out);

/**
 * # Safety
 * `tess` must come from [`ff_tessellation_load`] and not be used afterwards. Null is ignored.
 */
void ff_tessellation_free(struct FfTessellation *tess);

/**
 * Number of zones, 0 for null.
 *
 * # Safety
 * `tess` must be null or a live handle.
 */
size_t ff_tessellation_len(const struct FfTessellation *tess);

/**
 * Great-circle distance in km between zones `i` and `j`.
 *
 * # Safety
 * `tess` must be a live handle and `out` writable.
 */
enum FfStatus ff_tessellation_distance(const struct FfTessellation *tess,
                                       size_t i,
                                       size_t j,
                                       double *out);

/**
 * Loads a flows CSV against `tess`.
 *
 * # Safety
 * `tess` must be a live handle, `path` NUL-terminated and `out` writable.
 */
enum FfStatus ff_flows_load(const struct FfTessellation *tess,
                            const char *path,
                            struct FfFlowMatrix **out);

/**
 * Writes `flows` as CSV.
 *
 * # Safety
 * Handles must be live and `path` NUL-terminated.
 */
enum FfStatus ff_flows_save(const struct FfFlowMatrix *flows,
                            const struct FfTessellation *tess,
                            const char *path);

/**
 * # Safety
 * `flows` must come from this library and not be used afterwards. Null is ignored.
 */
void ff_flows_free(struct FfFlowMatrix *flows);

/**
 * Sum of all flows, 0 for null.
 *
 * # Safety
 * `flows` must be null or a live handle.
 */
double ff_flows_total(const struct FfFlowMatrix *flows);

/**
 * Flow from zone `origin` to zone `destination`; absent pairs are 0.
 *
 * # Safety
 * `flows` must be a live handle and `out` writable.
 */
enum FfStatus ff_flows_get(const struct FfFlowMatrix *flows,
                           size_t origin,
                           size_t destination,
                           double *out);

/**
 * Per-origin totals excluding self-flows, written to `out[0..n_zones]`.
 *
 * # Safety
 * `flows` must be a live handle and `out` must hold `len` doubles.
 */
enum FfStatus ff_flows_outflows(const struct FfFlowMatrix *flows, double *out, size_t len);

/**
 * Maximum-likelihood gravity fit of `gamma` and `beta`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum FfStatus ff_fit_gravity(const struct FfFlowMatrix *flows,
                             const struct FfTessellation *tess,
                             enum FfDeterrence kind,
                             struct FfGravityParams *out);

/**
 * Gravity flows for per-origin totals `outflows[0..len]`, `len` = zone count.
 *
 * # Safety
 * `tess` must be live, `params` readable, `outflows` hold `len` doubles and `out` writable.
 */
enum FfStatus ff_generate_gravity(const struct FfTessellation *tess,
                                  const struct FfGravityParams *params,
                                  const double *outflows,
                                  size_t len,
                                  struct FfFlowMatrix **out);

/**
 * Radiation flows for per-origin totals `outflows[0..len]`.
 *
 * # Safety
 * As for [`ff_generate_gravity`].
 */
enum FfStatus ff_generate_radiation(const struct FfTessellation *tess,
                                    const double *outflows,
                                    size_t len,
                                    struct FfFlowMatrix **out);

/**
 * Common part of commuters between generated and real flows. With
 * `off_diagonal` nonzero, self-flows are left out.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum FfStatus ff_cpc(const struct FfFlowMatrix *generated,
                     const struct FfFlowMatrix *real,
                     int32_t off_diagonal,
                     double *out);

/**
 * KL divergence in nats between two strictly positive mass vectors of length `len`,
 * each summing to one.
 *
 * # Safety
 * `p` and `q` must hold `len` doubles and `out` be writable.
 */
enum FfStatus ff_kl_divergence(const double *p, const double *q, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWFAIR_H */
