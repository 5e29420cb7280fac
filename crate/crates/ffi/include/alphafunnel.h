#ifndef ALPHAFUNNEL_H
#define ALPHAFUNNEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  AF_STATUS_OK = 0,
  /**
   * The scenario or an argument value failed validation.
   */
  AF_STATUS_VALIDATION = 1,
  /**
   * Integration stopped early; the partial trajectory is still returned.
   */
  AF_STATUS_ABORT = 2,
  AF_STATUS_IO = 3,
  AF_STATUS_NULL_POINTER = 4,
  AF_STATUS_INVALID_ARGUMENT = 5,
  AF_STATUS_PANIC = 6,
} AfStatus;

/**
 * Loaded and validated scenario.
 */
typedef struct AfScenario AfScenario;

/**
 * Recorded closed-loop run.
 */
typedef struct AfTrajectory AfTrajectory;

/**
 * Controller diagnostics at one `(t, x)`.
 */
typedef struct {
  double alpha;
  double alpha_hat;
  double epsilon;
  double xi;
  double barrier;
  double rho_lower;
  double rho_upper;
  bool clamped;
} AfControlInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *af_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *af_version(void);

/**
 * Loads a scenario file. On success `*out` receives a handle to release
 * with [`af_scenario_free`]; otherwise it is set to null.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
AfStatus af_scenario_load(const char *path, AfScenario **out);

/**
 * Same as [`af_scenario_load`] but reads the scenario from a string.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
AfStatus af_scenario_from_toml(const char *text, AfScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from this library, not yet freed.
 */
void af_scenario_free(AfScenario *scenario);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t af_scenario_dim(const AfScenario *scenario);

/**
 * Metric value at the scenario's initial state and time zero.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
AfStatus af_scenario_alpha0(const AfScenario *scenario, double *out);

/**
 * Smooth metric at `(t, x)`; `len` must equal the state dimension.
 *
 * # Safety
 * `scenario` must be a live handle, `x` must point to `len` doubles and
 * `out` must be writable.
 */
AfStatus af_alpha(const AfScenario *scenario, double t, const double *x, size_t len, double *out);

/**
 * Exact minimum of the predicates at `(t, x)`.
 *
 * # Safety
 * As for [`af_alpha`].
 */
AfStatus af_alpha_bar(const AfScenario *scenario,
                      double t,
                      const double *x,
                      size_t len,
                      double *out);

/**
 * State gradient of the smooth metric, written to `grad[0..len]`.
 *
 * # Safety
 * `x` and `grad` must each point to `len` doubles.
 */
AfStatus af_grad_alpha(const AfScenario *scenario,
                       double t,
                       const double *x,
                       size_t len,
                       double *grad);

/**
 * Control input at `(t, x)`, written to `u[0..len]`. `info` may be null.
 *
 * # Safety
 * `x` and `u` must each point to `len` doubles; `info` must be null or
 * writable.
 */
AfStatus af_control(const AfScenario *scenario,
                    double t,
                    const double *x,
                    size_t len,
                    double *u,
                    AfControlInfo *info);

/**
 * Lower funnel bound at time `t`, or NaN for a null handle.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
double af_rho_lower(const AfScenario *scenario, double t);

/**
 * Upper funnel bound at time `t`, or NaN for a null handle.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
double af_rho_upper(const AfScenario *scenario, double t);

/**
 * Maximum of the smooth metric over the state at time `t`. The maximiser
 * goes to `maximizer[0..len]`, which may be null. Returns
 * `AF_STATUS_VALIDATION` without converging, after still writing the best
 * point found if there is one.
 *
 * # Safety
 * `value` must be writable; `maximizer` must be null or point to `len`
 * doubles.
 */
AfStatus af_alpha_opt(const AfScenario *scenario,
                      double t,
                      double *value,
                      double *maximizer,
                      size_t len);

/**
 * Runs the closed loop with the scenario's settings. On `AF_STATUS_OK` and
 * `AF_STATUS_ABORT` alike `*out` receives a trajectory handle to release
 * with [`af_trajectory_free`].
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
AfStatus af_simulate(const AfScenario *scenario, AfTrajectory **out);

/**
 * # Safety
 * `trajectory` must be null or a handle from this library, not yet freed.
 */
void af_trajectory_free(AfTrajectory *trajectory);

/**
 * Number of recorded samples, or 0 for a null handle.
 *
 * # Safety
 * `trajectory` must be null or a live handle.
 */
size_t af_trajectory_len(const AfTrajectory *trajectory);

/**
 * Funnel breaches over the run, or 0 for a null handle.
 *
 * # Safety
 * `trajectory` must be null or a live handle.
 */
size_t af_trajectory_breaches(const AfTrajectory *trajectory);

/**
 * Whether the run reached its final time.
 *
 * # Safety
 * `trajectory` must be null or a live handle.
 */
bool af_trajectory_completed(const AfTrajectory *trajectory);

/**
 * First time the exact minimum turned positive; NaN if it never did.
 *
 * # Safety
 * `trajectory` must be null or a live handle.
 */
double af_trajectory_first_positive(const AfTrajectory *trajectory);

/**
 * Recorded sample `index`: time, state (into `x[0..len]`), smooth metric and
 * exact minimum. Any output pointer may be null.
 *
 * # Safety
 * `trajectory` must be a live handle; non-null outputs must be writable and
 * `x` must hold `len` doubles.
 */
AfStatus af_trajectory_sample(const AfTrajectory *trajectory,
                              size_t index,
                              double *t,
                              double *x,
                              size_t len,
                              double *alpha,
                              double *alpha_bar);

/**
 * Writes the trajectory as CSV.
 *
 * # Safety
 * `trajectory` must be a live handle and `path` a NUL-terminated string.
 */
AfStatus af_trajectory_write_csv(const AfTrajectory *trajectory, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALPHAFUNNEL_H */
