#ifndef HEFTY_H
#define HEFTY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum HeftyStatus {
  HEFTY_STATUS_OK = 0,
  HEFTY_STATUS_NULL_POINTER = 1,
  HEFTY_STATUS_INVALID_ARGUMENT = 2,
  // A fit, solve or root search failed on valid input.
  HEFTY_STATUS_NUMERICAL_FAILURE = 3,
  // A Rust panic was caught at the boundary.
  HEFTY_STATUS_PANIC = 4,
} HeftyStatus;

// Opaque experiment dataset.
typedef struct HeftyDataset HeftyDataset;

// Opaque validated mixture.
typedef struct HeftyMixture HeftyMixture;

// Mixture parameters by value.
typedef struct HeftyMixtureParams {
  double p_nonconv;
  double p_torso;
  double p_tail;
  double lambda;
  double cutoff_c;
  double alpha;
} HeftyMixtureParams;

// Core fields of an estimate.
typedef struct HeftyEstimate {
  double effect_abs;
  double lift;
  double std_err;
  double z_stat;
  double p_value;
} HeftyEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none. The
// pointer stays valid until the next failing call on the same thread.
const char *hefty_last_error(void);

// Library version as a static NUL-terminated string.
const char *hefty_version(void);

// Validates `params` and allocates a mixture handle.
//
// # Safety
// `params` must be readable and `out` writable.
enum HeftyStatus hefty_mixture_new(const struct HeftyMixtureParams *params,
                                   struct HeftyMixture **out);

// Fits the mixture to `n` non-negative observations at a fixed cutoff.
//
// # Safety
// `sample` must point to `n` doubles and `out` must be writable.
enum HeftyStatus hefty_mixture_fit(const double *sample,
                                   size_t n,
                                   double cutoff_c,
                                   struct HeftyMixture **out);

// Releases a mixture handle. NULL is ignored.
//
// # Safety
// `mixture` must come from this library and not be used afterwards.
void hefty_mixture_free(struct HeftyMixture *mixture);

// # Safety
// `mixture` must be a live handle and `out` writable.
enum HeftyStatus hefty_mixture_params(const struct HeftyMixture *mixture,
                                      struct HeftyMixtureParams *out);

// Closed-form mean; fails when `alpha <= 1`.
//
// # Safety
// `mixture` must be a live handle and `out` writable.
enum HeftyStatus hefty_mixture_mean(const struct HeftyMixture *mixture, double *out);

// # Safety
// `mixture` must be a live handle and `out` writable.
enum HeftyStatus hefty_mixture_cdf(const struct HeftyMixture *mixture, double y, double *out);

// Inverse CDF at level `q` in (0, 1).
//
// # Safety
// `mixture` must be a live handle and `out` writable.
enum HeftyStatus hefty_mixture_quantile(const struct HeftyMixture *mixture, double q, double *out);

// Writes `n` draws to `out`; identical seeds give identical draws.
//
// # Safety
// `mixture` must be a live handle and `out` must hold `n` doubles.
enum HeftyStatus hefty_mixture_sample(const struct HeftyMixture *mixture,
                                      size_t n,
                                      uint64_t seed,
                                      double *out);

// New handle whose mean is `(1 + target_lift)` times the original, obtained
// by re-solving the torso rate.
//
// # Safety
// `mixture` must be a live handle and `out` writable.
enum HeftyStatus hefty_mixture_inject_lift(const struct HeftyMixture *mixture,
                                           double target_lift,
                                           struct HeftyMixture **out);

// Builds a dataset from `n` responses, `n` assignments (0 or 1) and an
// optional row-major `n x k` covariate block (`covariates` may be NULL when
// `k` is 0). Inputs are copied.
//
// # Safety
// Pointers must reference arrays of the stated lengths; `out` writable.
enum HeftyStatus hefty_dataset_new(const double *response,
                                   const uint8_t *assignment,
                                   size_t n,
                                   const double *covariates,
                                   size_t k,
                                   struct HeftyDataset **out);

// Releases a dataset handle. NULL is ignored.
//
// # Safety
// `dataset` must come from this library and not be used afterwards.
void hefty_dataset_free(struct HeftyDataset *dataset);

// Runs the estimator named by `method_id` (for example `naive`,
// `winsor_union@0.99`, `huber`, `dml_huber@5`). `seed` drives the
// cross-fitting partition of the DML methods.
//
// # Safety
// `dataset` must be a live handle, `method_id` a NUL-terminated string and
// `out` writable.
enum HeftyStatus hefty_estimate(const struct HeftyDataset *dataset,
                                const char *method_id,
                                uint64_t seed,
                                struct HeftyEstimate *out);

// Exact binomial interval for `successes` out of `trials`.
//
// # Safety
// `lo` and `hi` must be writable.
enum HeftyStatus hefty_clopper_pearson(uint64_t successes,
                                       uint64_t trials,
                                       double confidence,
                                       double *lo,
                                       double *hi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEFTY_H */
