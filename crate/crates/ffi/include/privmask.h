/* C interface for the privmask masking and estimation routines.
 * Mirrors crates/ffi/src/lib.rs; keep the two in sync (the Rust test suite
 * checks that every exported symbol appears here). */

#ifndef PRIVMASK_H
#define PRIVMASK_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every fallible call. */
typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_ARGUMENT = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_ESTIMATION_FAILED = 3,
  PM_STATUS_UNAVAILABLE = 4,
  PM_STATUS_PANIC = 5,
} PmStatus;

/* Opaque masked-dataset handle. */
typedef struct PmMasked PmMasked;

/* Opaque estimate handle. */
typedef struct PmEstimate PmEstimate;

/* Crate version as a static NUL-terminated string. */
const char *pm_version(void);

/* Message describing the most recent failure on this thread, or NULL.
 * Valid until the next failing call on the same thread. */
const char *pm_last_error_message(void);

/* Mask raw data with the TM²+Noise scheme: y has length n with entries in
 * {0,1}; x is row-major n*p; z is row-major n*q or NULL when q == 0; sigma
 * is the noise standard deviation; seed/stream select the reproducible
 * random stream. On success *out owns the new handle. */
PmStatus pm_mask_tm2_noise(const double *y,
                           const double *x,
                           const double *z,
                           size_t n,
                           size_t p,
                           size_t q,
                           double sigma,
                           uint64_t seed,
                           uint64_t stream,
                           PmMasked **out);

/* Wrap already-masked data: w is row-major n*(p+q); sigma is the known
 * noise level recorded with the release. */
PmStatus pm_masked_from_parts(const double *y,
                              const double *w,
                              size_t n,
                              size_t p,
                              size_t q,
                              double sigma,
                              PmMasked **out);

void pm_masked_free(PmMasked *handle);

size_t pm_masked_n(const PmMasked *handle);
size_t pm_masked_p(const PmMasked *handle);
size_t pm_masked_q(const PmMasked *handle);
double pm_masked_sigma(const PmMasked *handle);

/* Copy the masked outcome vector into dst (length pm_masked_n). */
PmStatus pm_masked_copy_y(const PmMasked *handle, double *dst);

/* Copy the masked covariates row-major into dst (length n*(p+q)). */
PmStatus pm_masked_copy_w(const PmMasked *handle, double *dst);

/* Estimators: corrected least squares (uses the handle's sigma), naive
 * least squares, and the naive conditional MLE. alpha is the CI level
 * complement (0.05 for 95% intervals). On success *out owns the handle. */
PmStatus pm_estimate_corrected_ls(const PmMasked *handle,
                                  double alpha,
                                  PmEstimate **out);
PmStatus pm_estimate_naive_ls(const PmMasked *handle,
                              double alpha,
                              PmEstimate **out);
PmStatus pm_estimate_naive_mle(const PmMasked *handle,
                               double alpha,
                               PmEstimate **out);

void pm_estimate_free(PmEstimate *handle);

/* Length of theta (= p + q + 1). */
size_t pm_estimate_dim(const PmEstimate *handle);

/* Number of slope components beta1 (= p). */
size_t pm_estimate_num_slopes(const PmEstimate *handle);

/* Copy theta into dst (length pm_estimate_dim). */
PmStatus pm_estimate_theta(const PmEstimate *handle, double *dst);

/* Fetch phi; PM_STATUS_UNAVAILABLE for methods without one. */
PmStatus pm_estimate_phi(const PmEstimate *handle, double *out);

/* Copy beta1 into dst (length pm_estimate_num_slopes). */
PmStatus pm_estimate_beta1(const PmEstimate *handle, double *dst);

/* Copy the per-slope confidence bounds into lo/hi
 * (each length pm_estimate_num_slopes). */
PmStatus pm_estimate_ci(const PmEstimate *handle, double *lo, double *hi);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PRIVMASK_H */
