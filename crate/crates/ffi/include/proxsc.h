#ifndef PROXSC_H
#define PROXSC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ProxscBasis {
  PROXSC_BASIS_AFFINE = 0,
  PROXSC_BASIS_POLY2 = 1,
} ProxscBasis;

typedef enum ProxscMethod {
  PROXSC_METHOD_OUTCOME = 0,
  PROXSC_METHOD_WEIGHTING = 1,
  PROXSC_METHOD_DOUBLY_ROBUST = 2,
} ProxscMethod;

typedef enum ProxscScenario {
  PROXSC_SCENARIO_JUST_IDENTIFIED = 0,
  PROXSC_SCENARIO_OVER_IDENTIFIED = 1,
} ProxscScenario;

/*
 Result codes.
 */
typedef enum ProxscStatus {
  PROXSC_STATUS_OK = 0,
  PROXSC_STATUS_NULL_POINTER = 1,
  PROXSC_STATUS_INVALID_ARGUMENT = 2,
  PROXSC_STATUS_IO = 3,
  PROXSC_STATUS_VALIDATION = 4,
  PROXSC_STATUS_NUMERICAL = 5,
  PROXSC_STATUS_NOT_CONVERGED = 6,
  PROXSC_STATUS_PANIC = 7,
} ProxscStatus;

/*
 A fitted moment system.
 */
typedef struct ProxscFit ProxscFit;

/*
 A validated panel.
 */
typedef struct ProxscPanel ProxscPanel;

/*
 Estimation settings. Obtain defaults from [`proxsc_estimate_options_default`].
 */
typedef struct ProxscEstimateOptions {
  /*
   A `ProxscMethod` value.
   */
  int32_t method;
  /*
   Nonzero for the stationary moment system.
   */
  int32_t stationary;
  /*
   A `ProxscBasis` value for the outcome-bridge instruments.
   */
  int32_t basis_h;
  /*
   A `ProxscBasis` value for the treatment-bridge instruments.
   */
  int32_t basis_q;
  double ci_level;
  /*
   HAC truncation lag; negative selects the automatic bandwidth.
   */
  int64_t hac_lag;
  /*
   Nonzero to center the HAC autocovariances.
   */
  int32_t hac_centered;
  uint32_t max_iter;
  uint32_t multi_start;
  uint64_t seed;
} ProxscEstimateOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *proxsc_version(void);

/*
 Message for the most recent failure on this thread; empty after success.
 Valid until the next library call on the same thread.
 */
const char *proxsc_last_error_message(void);

/*
 Loads a delimited panel file. `layout_path` may be null, in which case
 `<path without extension>.layout` is read.

 # Safety
 `path` and a non-null `layout_path` must be NUL-terminated strings;
 `out` must be writable.
 */
enum ProxscStatus proxsc_panel_load(const char *path,
                                    const char *layout_path,
                                    struct ProxscPanel **out);

/*
 Builds a panel from row-major arrays: `y` has `n_periods` entries, `w`
 `n_periods * dw`, `z` `n_periods * dz` (NaN marks a missing proxy).

 # Safety
 Arrays must hold the stated number of elements; `out` must be writable.
 */
enum ProxscStatus proxsc_panel_from_arrays(const double *y,
                                           const double *w,
                                           size_t dw,
                                           const double *z,
                                           size_t dz,
                                           size_t n_periods,
                                           size_t t0,
                                           struct ProxscPanel **out);

/*
 Simulates a panel. `scenario` is a `ProxscScenario` value; `k` is
 ignored for the over-identified design.

 # Safety
 `out` must be writable.
 */
enum ProxscStatus proxsc_panel_simulate(int32_t scenario,
                                        size_t k,
                                        size_t n_periods,
                                        uint64_t seed,
                                        struct ProxscPanel **out);

/*
 New panel with a pooled polynomial trend of `degree` removed.

 # Safety
 `panel` must be a live handle; `out` must be writable.
 */
enum ProxscStatus proxsc_panel_detrend(const struct ProxscPanel *panel,
                                       size_t degree,
                                       struct ProxscPanel **out);

/*
 New panel holding the pre-treatment periods split at `placebo_t0`.

 # Safety
 `panel` must be a live handle; `out` must be writable.
 */
enum ProxscStatus proxsc_panel_placebo(const struct ProxscPanel *panel,
                                       size_t placebo_t0,
                                       struct ProxscPanel **out);

/*
 Writes the panel dimensions; any output pointer may be null.

 # Safety
 `panel` must be a live handle; non-null outputs must be writable.
 */
enum ProxscStatus proxsc_panel_dims(const struct ProxscPanel *panel,
                                    size_t *n_periods,
                                    size_t *t0,
                                    size_t *dw,
                                    size_t *dz);

/*
 # Safety
 `panel` must be null or a handle not yet freed.
 */
void proxsc_panel_free(struct ProxscPanel *panel);

struct ProxscEstimateOptions proxsc_estimate_options_default(void);

/*
 Fits the moment system. `options` may be null for defaults. The column
 arrays select zero-based donor (`h_cols`) and supplemental (`q_cols`)
 columns for the two bridges; a length of 0 selects all columns.

 A fit that did not converge is still returned through `out`, with status
 `NotConverged`.

 # Safety
 `panel` must be a live handle, arrays must hold the stated lengths, and
 `out` must be writable.
 */
enum ProxscStatus proxsc_estimate(const struct ProxscPanel *panel,
                                  const struct ProxscEstimateOptions *options,
                                  const size_t *h_cols,
                                  size_t n_h_cols,
                                  const size_t *q_cols,
                                  size_t n_q_cols,
                                  struct ProxscFit **out);

/*
 ATT estimate and standard error (NaN when unavailable).

 # Safety
 `fit` must be a live handle; non-null outputs must be writable.
 */
enum ProxscStatus proxsc_fit_att(const struct ProxscFit *fit, double *estimate, double *se);

/*
 Wald interval for the ATT. Returns `NotConverged` (outputs untouched)
 when the interval is empty.

 # Safety
 `fit` must be a live handle; `lo` and `hi` must be writable.
 */
enum ProxscStatus proxsc_fit_ci(const struct ProxscFit *fit, double *lo, double *hi);

/*
 Convergence flag (1 or 0) and objective value at the optimum.

 # Safety
 `fit` must be a live handle; non-null outputs must be writable.
 */
enum ProxscStatus proxsc_fit_status(const struct ProxscFit *fit,
                                    int32_t *converged,
                                    double *objective);

/*
 Copies the parameter vector into `buf` (up to `len` values) and writes the
 full length to `needed`. Pass `buf = NULL, len = 0` to query the length.

 # Safety
 `fit` must be a live handle; `buf` must hold `len` values; `needed` may be null.
 */
enum ProxscStatus proxsc_fit_theta(const struct ProxscFit *fit,
                                   double *buf,
                                   size_t len,
                                   size_t *needed);

/*
 JSON summary of the fit. Release with [`proxsc_string_free`].

 # Safety
 `fit` must be a live handle; `out` must be writable.
 */
enum ProxscStatus proxsc_fit_report_json(const struct ProxscFit *fit, char **out);

/*
 # Safety
 `fit` must be null or a handle not yet freed.
 */
void proxsc_fit_free(struct ProxscFit *fit);

/*
 # Safety
 `s` must be null or a string returned by this library and not yet freed.
 */
void proxsc_string_free(char *s);

/*
 Wilson score interval for `successes` out of `n`.

 # Safety
 `lo` and `hi` must be writable.
 */
enum ProxscStatus proxsc_wilson_interval(size_t successes,
                                         size_t n,
                                         double level,
                                         double *lo,
                                         double *hi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROXSC_H */
