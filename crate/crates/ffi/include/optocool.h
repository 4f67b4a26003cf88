#ifndef OPTOCOOL_H
#define OPTOCOOL_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which spectrum [`oc_system_spectrum`] evaluates.
typedef enum OcSpectrumKind {
  // Open-loop measured displacement.
  OC_SPECTRUM_KIND_OPEN_MEASURED = 0,
  // In-loop position.
  OC_SPECTRUM_KIND_IN_LOOP_POSITION = 1,
  // In-loop measured displacement.
  OC_SPECTRUM_KIND_IN_LOOP_MEASURED = 2,
} OcSpectrumKind;

// Result codes.
typedef enum OcStatus {
  OC_STATUS_OK = 0,
  OC_STATUS_NULL_POINTER = 1,
  OC_STATUS_INVALID_ARGUMENT = 2,
  OC_STATUS_CONFIG = 3,
  OC_STATUS_UNSTABLE = 4,
  OC_STATUS_NUMERICAL = 5,
  OC_STATUS_NON_CONVERGENCE = 6,
  OC_STATUS_DATA = 7,
  OC_STATUS_IO = 8,
  OC_STATUS_PANIC = 9,
  OC_STATUS_OUT_OF_RANGE = 10,
} OcStatus;

// A completed fit.
typedef struct OcFit OcFit;

// Device, measurement and controller.
typedef struct OcSystem OcSystem;

// Noise budget in SI units and quanta.
typedef struct OcNoiseBudget {
  double s_ff_th;
  double s_ff_aux;
  double s_ff_qba;
  double s_ff_tot;
  double s_xx_imp;
  double n_imp;
  double n_tot;
  double eta;
  double heisenberg_product;
  double c_q;
} OcNoiseBudget;

// Loop operating point.
typedef struct OcOperatingPoint {
  double gain;
  double phase_rad;
  double nbar;
  double nbar_error_bound;
  double gamma_eff_hz;
} OcOperatingPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library on the same thread.
const char *oc_last_error_message(void);

// Static description of a status code.
const char *oc_status_name(enum OcStatus status);

// Library version as a static string.
const char *oc_version(void);

// Release a string returned by this library.
//
// # Safety
// `s` must be NULL or a pointer returned by a function documented as
// returning an owned string, not yet freed.
void oc_string_free(char *s);

// Parse a TOML configuration.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum OcStatus oc_system_from_toml(const char *toml, struct OcSystem **out);

// Reference device at quantum cooperativity `c_q` with the reference filter
// at the cooling phase and zero gain.
//
// # Safety
// `out` must be writable.
enum OcStatus oc_system_reference(double c_q, struct OcSystem **out);

// # Safety
// `system` must be NULL or a handle from this library, not yet freed.
void oc_system_free(struct OcSystem *system);

// # Safety
// `system` must be a live handle; `out` writable.
enum OcStatus oc_system_noise_budget(const struct OcSystem *system, struct OcNoiseBudget *out);

// Set the controller gain (kg·s⁻², i.e. N/m).
//
// # Safety
// `system` must be a live handle.
enum OcStatus oc_system_set_gain(struct OcSystem *system, double gain);

// Set the controller phase in radians.
//
// # Safety
// `system` must be a live handle.
enum OcStatus oc_system_set_phase(struct OcSystem *system, double phase_rad);

// Set the controller phase to the cooling phase and report it.
//
// # Safety
// `system` must be a live handle; `phase_rad` NULL or writable.
enum OcStatus oc_system_use_cooling_phase(struct OcSystem *system, double *phase_rad);

// Occupancy at the current gain and phase. Fails with
// `OC_STATUS_UNSTABLE` when the loop is unstable.
//
// # Safety
// `system` must be a live handle; `out` writable.
enum OcStatus oc_system_operating_point(const struct OcSystem *system,
                                        struct OcOperatingPoint *out);

// Search `gain_points` log-spaced gains at the current phase, refine the
// minimum-occupancy gain, store it in the handle and report it.
//
// # Safety
// `system` must be a live handle; `out` writable.
enum OcStatus oc_system_optimize_gain(struct OcSystem *system,
                                      size_t gain_points,
                                      struct OcOperatingPoint *out);

// Evaluate a PSD (m²/Hz) at `len` frequencies in Hz.
//
// # Safety
// `system` must be a live handle; `frequencies_hz` and `out` must hold
// `len` values.
enum OcStatus oc_system_spectrum(const struct OcSystem *system,
                                 enum OcSpectrumKind kind,
                                 const double *frequencies_hz,
                                 size_t len,
                                 double *out);

// Occupancy `½(√((C_q+1)/(η_det C_q)) − 1)` reachable by optimal estimation.
// Pass `INFINITY` for the large-cooperativity limit.
//
// # Safety
// `out` must be writable.
enum OcStatus oc_nbar_est(double eta_det, double c_q, double *out);

// Sideband-cooling floor of a red-detuned beam.
//
// # Safety
// `out` must be writable.
enum OcStatus oc_sideband_nbar_min(double kappa_hz,
                                   double detuning_hz,
                                   double mechanical_frequency_hz,
                                   double *out);

// Multiply each expected PSD value by a `Gamma(N, 1/N)` variate drawn from
// the seeded stream. `out` may alias `expected`.
//
// # Safety
// `expected` and `out` must hold `len` values.
enum OcStatus oc_synth_periodogram(const double *expected,
                                   size_t len,
                                   uint32_t averages,
                                   uint64_t seed,
                                   double *out);

// Fit the open-loop Lorentzian to an averaged periodogram.
//
// # Safety
// `system` must be a live handle; the arrays must hold `len` values; `out`
// writable. The fit is released with [`oc_fit_free`].
enum OcStatus oc_fit_lorentzian(const struct OcSystem *system,
                                const double *frequencies_hz,
                                const double *psd,
                                size_t len,
                                double averages,
                                struct OcFit **out);

// Fit the heating transient `n̄(t)` after the loop is opened at `t = 0`.
//
// # Safety
// The arrays must hold `len` values; `out` writable.
enum OcStatus oc_fit_heating(const double *times_s,
                             const double *nbar,
                             size_t len,
                             struct OcFit **out);

// Fit an exponential amplitude ringdown of a mode at `mechanical_frequency_hz`.
//
// # Safety
// The arrays must hold `len` values; `out` writable.
enum OcStatus oc_fit_ringdown(const double *times_s,
                              const double *amplitudes,
                              size_t len,
                              double mechanical_frequency_hz,
                              struct OcFit **out);

// # Safety
// `fit` must be NULL or a handle from this library, not yet freed.
void oc_fit_free(struct OcFit *fit);

// Number of fitted parameters, or 0 for a NULL handle.
//
// # Safety
// `fit` must be NULL or a live handle.
size_t oc_fit_parameter_count(const struct OcFit *fit);

// Name of parameter `index`, owned by the fit; NULL when out of range.
//
// # Safety
// `fit` must be NULL or a live handle.
const char *oc_fit_parameter_name(const struct OcFit *fit, size_t index);

// Estimate and standard error of parameter `index`.
//
// # Safety
// `fit` must be a live handle; `estimate` and `std_error` writable.
enum OcStatus oc_fit_parameter(const struct OcFit *fit,
                               size_t index,
                               double *estimate,
                               double *std_error);

// Whether the optimizer converged.
//
// # Safety
// `fit` must be NULL or a live handle.
bool oc_fit_converged(const struct OcFit *fit);

// Full report as JSON. The string is owned by the caller and released
// with [`oc_string_free`].
//
// # Safety
// `fit` must be a live handle; `out` writable.
enum OcStatus oc_fit_to_json(const struct OcFit *fit, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTOCOOL_H */
