#ifndef LUMPFIT_H
#define LUMPFIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_POINTER = 1,
  LF_STATUS_INVALID_ARGUMENT = 2,
  LF_STATUS_IO = 3,
  LF_STATUS_PARSE = 4,
  LF_STATUS_NUMERICAL = 5,
  LF_STATUS_DIVERGED = 6,
  LF_STATUS_BUFFER_TOO_SMALL = 7,
  LF_STATUS_PANIC = 8,
} LfStatus;

/**
 * Opaque result of a control synthesis.
 */
typedef struct LfControl LfControl;

/**
 * Opaque fitted model.
 */
typedef struct LfModel LfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *lf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lf_version(void);

/**
 * Fresh model with default constants, a seeded network and capacitance `c`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LfStatus lf_model_new(uint64_t seed, double capacitance, struct LfModel **out);

/**
 * Loads a model file written by `lumpfit fit` or [`lf_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LfStatus lf_model_load(const char *path, struct LfModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum LfStatus lf_model_save(const struct LfModel *model, const char *path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void lf_model_free(struct LfModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum LfStatus lf_model_capacitance(const struct LfModel *model, double *out);

/**
 * Learned internal heat generation at temperature `t` (°C) and power `p` (W).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum LfStatus lf_model_heat_input(const struct LfModel *model, double t, double p, double *out);

/**
 * Simulates the model on `n_points` samples `t_k = power_times[0] + k*dt`,
 * driven by the piecewise-linear power signal `(power_times, power_values)`.
 *
 * # Safety
 * The power arrays must hold `n_power` values each and
 * `out_temperatures` must hold `n_points` values.
 */
enum LfStatus lf_model_simulate(const struct LfModel *model,
                                const double *power_times,
                                const double *power_values,
                                size_t n_power,
                                double t_init,
                                double dt,
                                size_t n_points,
                                size_t substeps,
                                double *out_temperatures);

/**
 * Heat input over an `n_t` × `n_p` grid, temperature-major, into `out_heat`.
 *
 * # Safety
 * `out_heat` must hold `n_t * n_p` values.
 */
enum LfStatus lf_model_surface(const struct LfModel *model,
                               double t_min,
                               double t_max,
                               double p_min,
                               double p_max,
                               size_t n_t,
                               size_t n_p,
                               double *out_heat);

/**
 * Synthesizes a power profile that drives `model` from `t_init` to `t_set`
 * over `horizon` seconds on a `dt` grid.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum LfStatus lf_control_synthesize(const struct LfModel *model,
                                    double t_set,
                                    double p_max,
                                    double horizon,
                                    double t_init,
                                    double dt,
                                    uint64_t seed,
                                    struct LfControl **out);

/**
 * Number of samples in a synthesized profile; 0 for a null handle.
 *
 * # Safety
 * `control` must be null or a live handle.
 */
size_t lf_control_len(const struct LfControl *control);

/**
 * # Safety
 * `control` must be a live handle; `out` must be writable.
 */
enum LfStatus lf_control_loss(const struct LfControl *control, double *out);

/**
 * Copies times, powers and predicted temperatures into caller buffers of
 * length `len`, which must be at least [`lf_control_len`]. Any output
 * pointer may be null to skip that series.
 *
 * # Safety
 * Non-null output pointers must hold `len` values.
 */
enum LfStatus lf_control_copy(const struct LfControl *control,
                              double *out_times,
                              double *out_power,
                              double *out_temperatures,
                              size_t len);

/**
 * Releases a control handle. Null is ignored.
 *
 * # Safety
 * `control` must come from this library and not be used afterwards.
 */
void lf_control_free(struct LfControl *control);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUMPFIT_H */
