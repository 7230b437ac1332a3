#ifndef THYROSIM_H
#define THYROSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ThyrosimStatus {
  THYROSIM_STATUS_OK = 0,
  THYROSIM_STATUS_NULL_POINTER = 1,
  /**
   * Bad input: malformed JSON, failed validation, non-positive values.
   */
  THYROSIM_STATUS_INVALID = 2,
  /**
   * A scan or reconstruction failed.
   */
  THYROSIM_STATUS_RUNTIME = 3,
  THYROSIM_STATUS_PANIC = 4,
} ThyrosimStatus;

/**
 * Voxelized phantom.
 */
typedef struct ThyrosimPhantom ThyrosimPhantom;

/**
 * Parsed and validated scenario.
 */
typedef struct ThyrosimScenario ThyrosimScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *thyrosim_last_error(void);

/**
 * Library version, static NUL-terminated string.
 */
const char *thyrosim_version(void);

/**
 * Default scenario: default phantom, probe centered over each lobe.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum ThyrosimStatus thyrosim_scenario_default(struct ThyrosimScenario **out);

/**
 * Parses a scenario from NUL-terminated UTF-8 JSON.
 *
 * # Safety
 * `json` must be a valid C string; `out` as for `thyrosim_scenario_default`.
 */
enum ThyrosimStatus thyrosim_scenario_from_json(const char *json, struct ThyrosimScenario **out);

/**
 * # Safety
 * `scenario` must come from a scenario constructor and not be used again.
 */
void thyrosim_scenario_free(struct ThyrosimScenario *scenario);

/**
 * Voxelizes the scenario's phantom.
 *
 * # Safety
 * `scenario` must be a live handle; `out` a valid pointer.
 */
enum ThyrosimStatus thyrosim_phantom_build(const struct ThyrosimScenario *scenario,
                                           struct ThyrosimPhantom **out);

/**
 * # Safety
 * `phantom` must come from `thyrosim_phantom_build` and not be used again.
 */
void thyrosim_phantom_free(struct ThyrosimPhantom *phantom);

/**
 * Ground-truth thyroid volume of the voxelized phantom, ml.
 *
 * # Safety
 * `phantom` must be a live handle; `out_ml` a valid pointer.
 */
enum ThyrosimStatus thyrosim_phantom_ground_truth_ml(const struct ThyrosimPhantom *phantom,
                                                     double *out_ml);

/**
 * Scans both lobes from the scenario's initial poses and returns the
 * compounded thyroid volume, ml.
 *
 * # Safety
 * Handles must be live; `out_ml` a valid pointer.
 */
enum ThyrosimStatus thyrosim_robotic_volume_ml(const struct ThyrosimPhantom *phantom,
                                               const struct ThyrosimScenario *scenario,
                                               uint64_t seed,
                                               double *out_ml);

/**
 * Ellipsoid-formula volume from perfect per-lobe axis measurements, ml.
 *
 * # Safety
 * `phantom` must be a live handle; `out_ml` a valid pointer.
 */
enum ThyrosimStatus thyrosim_conventional_volume_ml(const struct ThyrosimPhantom *phantom,
                                                    double coefficient,
                                                    double *out_ml);

/**
 * `c * m1 * m2 * m3` with axes in cm, ml.
 *
 * # Safety
 * `out_ml` must be a valid pointer.
 */
enum ThyrosimStatus thyrosim_ellipsoid_volume_ml(double m1_cm,
                                                 double m2_cm,
                                                 double m3_cm,
                                                 double coefficient,
                                                 double *out_ml);

/**
 * Marinelli activity `25 * m * D / (IU_24h * T_eff)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ThyrosimStatus thyrosim_marinelli_activity(double mass_g,
                                                double dose_gy,
                                                double uptake_24h,
                                                double t_eff_h,
                                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THYROSIM_H */
