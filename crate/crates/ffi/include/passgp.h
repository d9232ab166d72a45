#ifndef PASSGP_H
#define PASSGP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Active set selection strategy.
typedef enum PassgpMode {
  PASSGP_MODE_PASS = 0,
  PASSGP_MODE_FPASS = 1,
  PASSGP_MODE_RANDOM = 2,
  PASSGP_MODE_FULL = 3,
} PassgpMode;

// Result of every fallible call.
typedef enum PassgpStatus {
  PASSGP_STATUS_OK = 0,
  PASSGP_STATUS_NULL_POINTER = 1,
  PASSGP_STATUS_INVALID_ARGUMENT = 2,
  PASSGP_STATUS_NUMERICAL = 3,
  PASSGP_STATUS_IO = 4,
  PASSGP_STATUS_MODEL_FORMAT = 5,
  PASSGP_STATUS_PANIC = 6,
} PassgpStatus;

// A trained binary classifier.
typedef struct PassgpModel PassgpModel;

// Training options; start from [`passgp_fit_options_default`].
typedef struct PassgpFitOptions {
  enum PassgpMode mode;
  uintptr_t n_init;
  uintptr_t n_sub;
  uintptr_t n_pass;
  double p_inc;
  double p_del;
  uintptr_t m_budget;
  double p_exc;
  // Re-tune the kernel every this many subset iterations.
  uintptr_t hyperopt_every;
  // Nonzero keeps the initial kernel.
  int32_t fixed_theta;
  uint64_t seed;
  // Initial squared-exponential kernel, natural scale.
  double signal_var;
  double sq_length;
  double jitter;
} PassgpFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library defaults: PASS mode, unit signal variance, jitter 0.01.
struct PassgpFitOptions passgp_fit_options_default(void);

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *passgp_last_error(void);

// Trains on `n x d` inputs `x` with labels `y` in {-1, +1}.
//
// # Safety
// `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to
// writable storage for one handle. `options` may be null for defaults.
enum PassgpStatus passgp_fit(const double *x,
                             uintptr_t n,
                             uintptr_t d,
                             const double *y,
                             const struct PassgpFitOptions *options,
                             struct PassgpModel **out);

// Reads a model file written by `passgp train` or [`passgp_model_save`].
//
// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum PassgpStatus passgp_model_load(const char *path, struct PassgpModel **out);

// # Safety
// `model` must be a live handle and `path` a nul-terminated string.
enum PassgpStatus passgp_model_save(const struct PassgpModel *model, const char *path);

// Releases a handle; null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void passgp_model_free(struct PassgpModel *model);

// Number of active points, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
uintptr_t passgp_model_active_size(const struct PassgpModel *model);

// Input dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
uintptr_t passgp_model_dim(const struct PassgpModel *model);

// Predictive mean, variance and probability of `+1` for `n` queries.
// Any output pointer may be null to skip it.
//
// # Safety
// `x` must point to `n * d` doubles and each non-null output to `n`.
enum PassgpStatus passgp_predict(const struct PassgpModel *model,
                                 const double *x,
                                 uintptr_t n,
                                 uintptr_t d,
                                 double *mean,
                                 double *var,
                                 double *prob);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PASSGP_H */
