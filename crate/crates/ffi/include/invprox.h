#ifndef INVPROX_H
#define INVPROX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. `2`, `3` and `4` match the CLI exit codes.
 */
typedef enum {
  INVPROX_STATUS_OK = 0,
  /**
   * Invalid configuration, expression, or snapshot file.
   */
  INVPROX_STATUS_CONFIG_ERROR = 2,
  /**
   * Numerical failure (degenerate space, non-PSD Gram matrix, ...).
   */
  INVPROX_STATUS_NUMERICAL_ERROR = 3,
  /**
   * An internal consistency check failed.
   */
  INVPROX_STATUS_CONSISTENCY_ERROR = 4,
  INVPROX_STATUS_NULL_POINTER = 10,
  INVPROX_STATUS_INVALID_UTF8 = 11,
  /**
   * The output buffer is too short; the required length was written.
   */
  INVPROX_STATUS_BUFFER_TOO_SMALL = 12,
  INVPROX_STATUS_INVALID_ARGUMENT = 13,
  INVPROX_STATUS_PANIC = 99,
} InvproxStatus;

/**
 * Result of a proximity computation on one dictionary.
 */
typedef struct InvproxAnalysis InvproxAnalysis;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *invprox_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *invprox_version(void);

/**
 * Runs the proximity computation for a JSON configuration given as text.
 * Relative snapshot paths resolve against `base_dir` (NULL means the current
 * directory).
 *
 * # Safety
 * `config_json` and a non-NULL `base_dir` must be NUL-terminated strings;
 * `out` must be a valid pointer.
 */
InvproxStatus invprox_analysis_from_json(const char *config_json,
                                         const char *base_dir,
                                         InvproxAnalysis **out);

/**
 * Like [`invprox_analysis_from_json`], reading the configuration from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
InvproxStatus invprox_analysis_from_path(const char *path, InvproxAnalysis **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `h` must come from this library and not be used afterwards.
 */
void invprox_analysis_free(InvproxAnalysis *h);

/**
 * Invariance proximity, in `[0, 1]`.
 *
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
InvproxStatus invprox_analysis_proximity(const InvproxAnalysis *h, double *out);

/**
 * Number of dictionary atoms and dimensions of `S`, `KS` and `S + KS`.
 *
 * # Safety
 * `h` must be a live handle; each non-NULL out-pointer must be valid.
 */
InvproxStatus invprox_analysis_dims(const InvproxAnalysis *h,
                                    size_t *num_atoms,
                                    size_t *dim_s,
                                    size_t *dim_ks,
                                    size_t *dim_w);

/**
 * Principal angles (radians, ascending) between `S` and `KS`. `len`
 * receives the count; pass `cap = 0` to query it.
 *
 * # Safety
 * `h` must be a live handle, `buf` must hold `cap` doubles, `len` must be valid.
 */
InvproxStatus invprox_analysis_angles(const InvproxAnalysis *h,
                                      double *buf,
                                      size_t cap,
                                      size_t *len);

/**
 * Dictionary coefficients of a function attaining the proximity (one per atom).
 *
 * # Safety
 * As [`invprox_analysis_angles`].
 */
InvproxStatus invprox_analysis_witness(const InvproxAnalysis *h,
                                       double *buf,
                                       size_t cap,
                                       size_t *len);

/**
 * Relative prediction error `‖Kf − P_S Kf‖ / ‖Kf‖` of `f = Σ coeffs[i] Ψ_i`.
 *
 * # Safety
 * `h` must be a live handle, `coeffs` must hold `n` doubles, `out` must be valid.
 */
InvproxStatus invprox_analysis_relative_error(const InvproxAnalysis *h,
                                              const double *coeffs,
                                              size_t n,
                                              double *out);

/**
 * The full report as JSON (the `proximity` subcommand's output). Free the
 * string with [`invprox_string_free`].
 *
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
InvproxStatus invprox_analysis_report_json(const InvproxAnalysis *h, char **out);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void invprox_string_free(char *s);

/**
 * Proximity of the three reference subspaces `S1`, `S2`, `S3` on the built-in
 * planar system at quadrature order `order` (0 selects the default of 20).
 *
 * # Safety
 * `out` must hold three doubles.
 */
InvproxStatus invprox_table1(size_t order, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVPROX_H */
