#ifndef HYBRID_HTF_H
#define HYBRID_HTF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HhStatus {
  HH_STATUS_OK = 0,
  HH_STATUS_NULL_POINTER = 1,
  HH_STATUS_INVALID_INPUT = 2,
  HH_STATUS_CONFIG = 3,
  HH_STATUS_EVENT_LOCALIZATION = 4,
  HH_STATUS_DIVERGENCE = 5,
  HH_STATUS_NOT_SETTLED = 6,
  HH_STATUS_AMBIGUOUS_SWITCHING = 7,
  HH_STATUS_RESAMPLING_REQUIRED = 8,
  HH_STATUS_ALIASING = 9,
  HH_STATUS_SINGULAR_FREQUENCY = 10,
  HH_STATUS_ILL_CONDITIONED = 11,
  HH_STATUS_NO_DATA = 12,
  HH_STATUS_IO = 13,
  HH_STATUS_PARSE = 14,
  HH_STATUS_BUFFER_TOO_SMALL = 15,
  HH_STATUS_PANIC = 16,
} HhStatus;

// Opaque set of harmonic transfer functions.
typedef struct HhHtfSet HhHtfSet;

// Opaque settled limit cycle.
typedef struct HhLimitCycle HhLimitCycle;

// Opaque hybrid oscillator.
typedef struct HhModel HhModel;

// Physical parameters, field for field as in the JSON configuration.
typedef struct HhModelParams {
  double m;
  double k;
  double c;
  double g;
  double x0;
  double forcing_amplitude;
  double forcing_freq;
} HhModelParams;

typedef struct HhCycleSummary {
  double period;
  // Clock phase at which the damper engages (s).
  double t_hat;
  double t_off;
  double duty;
  double residual_x;
  double residual_xdot;
  size_t samples;
} HhCycleSummary;

typedef struct HhFitResult {
  double k_hat;
  double c_hat;
  double objective;
  size_t iterations;
  bool converged;
} HhFitResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread; empty after a
// successful call. Valid until the next call on the same thread.
const char *hh_last_error_message(void);

// Writes the reference parameters (m=1, k=200, c=2, g=9.81, x0=0.2, unit
// forcing at 1 Hz) to `out`.
//
// # Safety
// `out` must be null or valid for writes.
enum HhStatus hh_default_params(struct HhModelParams *out);

// # Safety
// `params` must be valid for reads and `out` valid for writes.
enum HhStatus hh_model_new(const struct HhModelParams *params, struct HhModel **out);

// # Safety
// `model` must be null or a handle from [`hh_model_new`] not yet freed.
void hh_model_free(struct HhModel *model);

// State derivative `(xdot, xddot)` at `(x, xdot)`, time `t` and input `u`.
//
// # Safety
// `model` must be a live handle; `out` must hold 2 writable doubles.
enum HhStatus hh_model_eval_chart(const struct HhModel *model,
                                  double x,
                                  double xdot,
                                  double t,
                                  double u,
                                  double *out);

// Integrates `n_cycles` unperturbed periods and returns the last one.
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum HhStatus hh_cycle_settle(const struct HhModel *model,
                              size_t n_cycles,
                              double dt,
                              double tolerance,
                              struct HhLimitCycle **out);

// # Safety
// `cycle` must be null or a handle from [`hh_cycle_settle`] not yet freed.
void hh_cycle_free(struct HhLimitCycle *cycle);

// # Safety
// `cycle` must be a live handle and `out` valid for writes.
enum HhStatus hh_cycle_summary(const struct HhLimitCycle *cycle, struct HhCycleSummary *out);

// Copies the orbit samples into `x` and `xdot`, each of capacity `len`.
//
// # Safety
// `cycle` must be a live handle; `x` and `xdot` must hold `len` doubles.
enum HhStatus hh_cycle_samples(const struct HhLimitCycle *cycle,
                               double *x,
                               double *xdot,
                               size_t len);

// Theoretical HTFs of the linearization about `cycle`, truncated at order
// `n_h`, for harmonics `|n| <= n_keep` on `omega[0..len]` (rad/s).
//
// # Safety
// Handles must be live, `omega` must hold `len` doubles and `out` be valid
// for writes.
enum HhStatus hh_htf_theory(const struct HhModel *model,
                            const struct HhLimitCycle *cycle,
                            size_t n_h,
                            size_t n_keep,
                            const double *omega,
                            size_t len,
                            struct HhHtfSet **out);

// Runs the reference identification experiment (nine 30 s chirps of
// amplitude 0.004 over (0, 7] Hz, three harmonics) with curvature weight
// `alpha`, returning the estimated HTFs and the parameter fit.
//
// # Safety
// `params` must be valid for reads; `out_set` and `out_fit` for writes.
enum HhStatus hh_identify(const struct HhModelParams *params,
                          double alpha,
                          struct HhHtfSet **out_set,
                          struct HhFitResult *out_fit);

// Fits `(k, c)` to harmonics -1, 0, 1 of `target` with the switching
// geometry of `cycle` held fixed.
//
// # Safety
// Handles must be live and `out` valid for writes.
enum HhStatus hh_fit(const struct HhHtfSet *target,
                     const struct HhModel *model,
                     const struct HhLimitCycle *cycle,
                     size_t n_h,
                     double init_k,
                     double init_c,
                     size_t max_iterations,
                     struct HhFitResult *out);

// Number of grid points in `set` (0 for a null handle).
//
// # Safety
// `set` must be null or a live handle.
size_t hh_htf_len(const struct HhHtfSet *set);

// Copies the frequency grid (rad/s).
//
// # Safety
// `set` must be a live handle and `omega` hold `len` doubles.
enum HhStatus hh_htf_grid(const struct HhHtfSet *set, double *omega, size_t len);

// Copies `G_n` into `re` and `im`. Fails with `InvalidInput` when the set
// lacks harmonic `n`.
//
// # Safety
// `set` must be a live handle; `re` and `im` must hold `len` doubles.
enum HhStatus hh_htf_harmonic(const struct HhHtfSet *set,
                              int32_t n,
                              double *re,
                              double *im,
                              size_t len);

// # Safety
// `set` must be null or a handle returned by this library not yet freed.
void hh_htf_free(struct HhHtfSet *set);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYBRID_HTF_H */
