#ifndef CONICFLOW_H
#define CONICFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every function.
 */
typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_CONFIG = 3,
  CF_STATUS_DOMAIN = 4,
  CF_STATUS_TRAPPED = 5,
  CF_STATUS_NO_CONVERGENCE = 6,
  CF_STATUS_OUT_OF_INJECTIVITY = 7,
  CF_STATUS_NUMERICAL = 8,
  CF_STATUS_PANIC = 9,
} CfStatus;

/**
 * Time direction selector for sojourn data.
 */
typedef enum CfBranch {
  CF_BRANCH_FORWARD = 0,
  CF_BRANCH_BACKWARD = 1,
} CfBranch;

/**
 * Opaque metric handle.
 */
typedef struct CfMetric CfMetric;

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/**
 * Flat plane with compactification collar `x0` and injectivity bound `iota`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CfStatus cf_metric_euclidean(double x0, double iota, struct CfMetric **out);

/**
 * Conformal bump `(1 + epsilon * bump) g_flat` in the plane.
 *
 * # Safety
 * `center` must point to two doubles; `out` to writable storage for one handle.
 */
enum CfStatus cf_metric_conformal_bump(double epsilon,
                                       const double *center,
                                       double radius,
                                       double x0,
                                       double iota,
                                       struct CfMetric **out);

/**
 * Metric described by the `[metric]` section of a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` writable storage for one handle.
 */
enum CfStatus cf_metric_from_toml(const char *toml, struct CfMetric **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `m` must come from one of the constructors and not have been freed.
 */
void cf_metric_free(struct CfMetric *m);

/**
 * Dimension of the metric, or 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t cf_metric_dim(const struct CfMetric *m);

/**
 * Sojourn data `(y0, nu, mu)` of the ray through `(w, eta)`; `eta` is
 * normalized first. `tol` <= 0 selects the default accuracy.
 *
 * # Safety
 * `w`, `eta` must point to two doubles and `out` to three.
 */
enum CfStatus cf_sojourn(const struct CfMetric *m,
                         const double *w,
                         const double *eta,
                         enum CfBranch branch,
                         double tol,
                         double *out);

/**
 * Escape certificate within arclength `s_max`: `*nontrapped` is 1 when the
 * ray provably escapes and `*escape_s` the arclength at which it did.
 *
 * # Safety
 * `w`, `eta` must point to two doubles; outputs must be writable.
 */
enum CfStatus cf_classify(const struct CfMetric *m,
                          const double *w,
                          const double *eta,
                          double s_max,
                          int32_t *nontrapped,
                          double *escape_s);

/**
 * Phase `d(w, z)^2 / 2` along the minimizing geodesic.
 *
 * # Safety
 * `w`, `z` must point to two doubles; `out` must be writable.
 */
enum CfStatus cf_phase(const struct CfMetric *m, const double *w, const double *z, double *out);

/**
 * Leading transport amplitude `a0(z, w)`.
 *
 * # Safety
 * `w`, `z` must point to two doubles; `out` must be writable.
 */
enum CfStatus cf_amplitude_a0(const struct CfMetric *m,
                              const double *w,
                              const double *z,
                              double *out);

#endif  /* CONICFLOW_H */
