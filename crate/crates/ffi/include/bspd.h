#ifndef BSPD_H
#define BSPD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  BSPD_STATUS_OK = 0,
  BSPD_STATUS_NULL_POINTER = 1,
  BSPD_STATUS_INVALID_ARGUMENT = 2,
  BSPD_STATUS_INVALID_CONFIG = 3,
  BSPD_STATUS_DOMAIN = 4,
  BSPD_STATUS_DIMENSION = 5,
  BSPD_STATUS_SOLVER = 6,
  BSPD_STATUS_IO = 7,
  BSPD_STATUS_PARSE = 8,
  BSPD_STATUS_BUFFER_TOO_SMALL = 9,
  BSPD_STATUS_PANIC = 10,
} BspdStatus;

/**
 * One channel realization.
 */
typedef struct BspdChannel BspdChannel;

/**
 * Loaded configuration.
 */
typedef struct BspdConfig BspdConfig;

/**
 * Transmit beamformer and receivers.
 */
typedef struct BspdTransceiver BspdTransceiver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t bspd_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bspd_version(void);

/**
 * Loads a configuration document. `path` may be null for the built-in
 * defaults; `overrides` holds `n_overrides` strings of the form `KEY=VALUE`.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `overrides` must hold
 * `n_overrides` valid NUL-terminated strings; `out` must be writable.
 */
BspdStatus bspd_config_load(const char *path,
                            const char *const *overrides,
                            size_t n_overrides,
                            BspdConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from [`bspd_config_load`] not yet freed.
 */
void bspd_config_free(BspdConfig *cfg);

/**
 * Antenna and tag counts of a configuration.
 *
 * # Safety
 * `cfg` must be a live handle; the outputs must be writable or null.
 */
BspdStatus bspd_config_dims(const BspdConfig *cfg, size_t *m, size_t *n, size_t *k);

/**
 * Draws the channel of `realization` under the configuration's seed.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
BspdStatus bspd_channel_generate(const BspdConfig *cfg, size_t realization, BspdChannel **out);

/**
 * # Safety
 * `ch` must be null or a live channel handle.
 */
void bspd_channel_free(BspdChannel *ch);

/**
 * Runs BSPD. `max_iters = 0` keeps the configured limit. `iterations` and
 * `converged` may be null.
 *
 * # Safety
 * Handles must be live and belong to the same configuration; `out` writable.
 */
BspdStatus bspd_optimize(const BspdConfig *cfg,
                         const BspdChannel *ch,
                         size_t max_iters,
                         uint64_t seed,
                         BspdTransceiver **out,
                         size_t *iterations,
                         bool *converged);

/**
 * One of the reference transceivers, `which` in `1..=3`.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
BspdStatus bspd_baseline(const BspdConfig *cfg,
                         const BspdChannel *ch,
                         uint32_t which,
                         BspdTransceiver **out);

/**
 * # Safety
 * `t` must be null or a live transceiver handle.
 */
void bspd_transceiver_free(BspdTransceiver *t);

/**
 * `||v||^2`, or NaN for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
double bspd_transceiver_power(const BspdTransceiver *t);

/**
 * Copies one vector of the transceiver as interleaved `re, im` pairs.
 * `index = 0` selects the transmit beamformer, `1` the direct-link
 * receiver and `1 + k` the receiver of tag `k`.
 *
 * # Safety
 * `t` must be a live handle and `out` valid for `len` doubles.
 */
BspdStatus bspd_transceiver_get(const BspdTransceiver *t, size_t index, double *out, size_t len);

/**
 * Builds a transceiver from interleaved vectors: `v` (`2M` doubles),
 * `u_s` (`2N`) and all tag receivers back to back (`2NK`).
 *
 * # Safety
 * The arrays must hold the stated number of doubles; `out` writable.
 */
BspdStatus bspd_transceiver_new(const BspdConfig *cfg,
                                const double *v,
                                const double *u_s,
                                const double *u,
                                BspdTransceiver **out);

/**
 * Expected SINRs: `out[0]` for the direct link, `out[1 + k]` for tag `k`.
 *
 * # Safety
 * Handles must be live; `out` valid for `len >= K + 1` doubles.
 */
BspdStatus bspd_expected_sinr(const BspdConfig *cfg,
                              const BspdChannel *ch,
                              const BspdTransceiver *t,
                              double *out,
                              size_t len);

/**
 * Simulated worst-tag bit error rate and its 95% half-width.
 *
 * # Safety
 * Handles must be live; `ber` writable, `halfwidth` writable or null.
 */
BspdStatus bspd_worst_tag_ber(const BspdConfig *cfg,
                              const BspdChannel *ch,
                              const BspdTransceiver *t,
                              size_t n_slots,
                              uint64_t seed,
                              double *ber,
                              double *halfwidth);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSPD_H */
