#ifndef FBSDE_FILTER_H
#define FBSDE_FILTER_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum FbsdeStatus {
  FBSDE_STATUS_OK = 0,
  FBSDE_STATUS_NULL_POINTER = 1,
  FBSDE_STATUS_INVALID_ARGUMENT = 2,
  FBSDE_STATUS_UNKNOWN_MODEL = 3,
  FBSDE_STATUS_CONFIG = 4,
  // Numerical failure inside the filter (divergence, underflow, ...).
  FBSDE_STATUS_NUMERICAL = 5,
  // The filter already reached its last time step.
  FBSDE_STATUS_FINISHED = 6,
  // The destination buffer is too small; the required size was written.
  FBSDE_STATUS_BUFFER_TOO_SMALL = 7,
  // A Rust panic was caught at the boundary.
  FBSDE_STATUS_INTERNAL = 8,
} FbsdeStatus;

// Prediction scheme selector; stored as its integer value in
// [`FbsdeFilterConfig::variant`].
typedef enum FbsdeVariant {
  FBSDE_VARIANT_RIGHT_POINT_FIXED_POINT = 0,
  FBSDE_VARIANT_LEFT_POINT = 1,
} FbsdeVariant;

// A running filter: configuration plus the current state.
typedef struct FbsdeFilter FbsdeFilter;

// A learned Gaussian kernel density.
typedef struct FbsdeKernelDensity FbsdeKernelDensity;

// A model from the built-in zoo.
typedef struct FbsdeModel FbsdeModel;

// Plain-data subset of the filter settings. Start from
// [`fbsde_filter_config_default`] and override fields.
typedef struct FbsdeFilterConfig {
  size_t particles;
  size_t centers;
  size_t steps;
  double dt;
  double t0;
  size_t mc_samples;
  // An [`FbsdeVariant`] value.
  uint32_t variant;
  size_t sgd_steps;
  double alpha_rate;
  double lambda_rate;
  uint64_t seed;
} FbsdeFilterConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string. `*len` holds the buffer size on entry and the
// size needed (including the NUL) on return.
//
// # Safety
// `buf` must point to `*len` writable bytes (or be null with `*len == 0`).
enum FbsdeStatus fbsde_last_error_message(char *buf, size_t *len);

// Looks up a model of the built-in zoo ("linear1d", "ou1d",
// "doublewell1d", "linear2d").
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum FbsdeStatus fbsde_model_new(const char *name, struct FbsdeModel **out);

// # Safety
// `model` must come from [`fbsde_model_new`] and not be used afterwards.
void fbsde_model_free(struct FbsdeModel *model);

// State and observation dimensions.
//
// # Safety
// Pointers must be valid.
enum FbsdeStatus fbsde_model_dims(const struct FbsdeModel *model,
                                  size_t *dim_state,
                                  size_t *dim_obs);

// Simulates a truth path on `steps` steps of size `dt` from `t = 0`. The
// caller provides `(steps + 1) * dim_state` and `(steps + 1) * dim_obs`
// doubles, filled row by row.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum FbsdeStatus fbsde_model_simulate(const struct FbsdeModel *model,
                                      size_t steps,
                                      double dt,
                                      uint64_t seed,
                                      double *states,
                                      size_t states_len,
                                      double *observations,
                                      size_t observations_len);

// Fills `out` with the library defaults.
//
// # Safety
// `out` must be writable.
enum FbsdeStatus fbsde_filter_config_default(struct FbsdeFilterConfig *out);

// Creates a filter at `t0` with particles drawn from the initial density.
// The model handle may be freed afterwards.
//
// # Safety
// Pointers must be valid.
enum FbsdeStatus fbsde_filter_new(const struct FbsdeModel *model,
                                  const struct FbsdeFilterConfig *config,
                                  struct FbsdeFilter **out);

// # Safety
// `filter` must come from [`fbsde_filter_new`] and not be used afterwards.
void fbsde_filter_free(struct FbsdeFilter *filter);

// Advances one step using the observation path at the previous and the
// new time (each `dim_obs` values). On failure the filter is unchanged.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum FbsdeStatus fbsde_filter_step(struct FbsdeFilter *filter,
                                   const double *obs_prev,
                                   const double *obs_now,
                                   size_t dim_obs);

// Current time index k (0 before the first step).
//
// # Safety
// Pointers must be valid.
enum FbsdeStatus fbsde_filter_step_index(const struct FbsdeFilter *filter, size_t *k);

// Posterior mean and per-coordinate variance (each `dim_state` values);
// `variance` may be null.
//
// # Safety
// Non-null buffers must hold `dim_state` doubles.
enum FbsdeStatus fbsde_filter_moments(const struct FbsdeFilter *filter,
                                      double *mean,
                                      double *variance,
                                      size_t dim_state);

// Copies out the learned density of the current step. Fails with
// `InvalidArgument` at k = 0, where no density has been learned yet.
//
// # Safety
// Pointers must be valid.
enum FbsdeStatus fbsde_filter_density(const struct FbsdeFilter *filter,
                                      struct FbsdeKernelDensity **out);

// # Safety
// `kd` must come from [`fbsde_filter_density`] and not be used afterwards.
void fbsde_kd_free(struct FbsdeKernelDensity *kd);

// Number of kernel components and state dimension.
//
// # Safety
// Pointers must be valid.
enum FbsdeStatus fbsde_kd_shape(const struct FbsdeKernelDensity *kd,
                                size_t *components,
                                size_t *dim);

// Evaluates the density at one point of `dim` coordinates.
//
// # Safety
// `x` must hold `dim` doubles; `value` must be writable.
enum FbsdeStatus fbsde_kd_eval(const struct FbsdeKernelDensity *kd,
                               const double *x,
                               size_t dim,
                               double *value);

// Total mass of the density (the integral of the kernel mixture).
//
// # Safety
// Pointers must be valid.
enum FbsdeStatus fbsde_kd_mass(const struct FbsdeKernelDensity *kd, double *mass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBSDE_FILTER_H */
