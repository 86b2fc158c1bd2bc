#ifndef OAC_H
#define OAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  OAC_STATUS_OK = 0,
  OAC_STATUS_NULL_POINTER = 1,
  OAC_STATUS_CONFIG = 2,
  OAC_STATUS_SHAPE = 3,
  OAC_STATUS_DOMAIN = 4,
  OAC_STATUS_CAPACITY = 5,
  OAC_STATUS_PARSE = 6,
  OAC_STATUS_BUFFER_TOO_SMALL = 7,
  OAC_STATUS_PANIC = 8,
  OAC_STATUS_OTHER = 9,
} OacStatus;

typedef enum {
  OAC_AGGREGATION_OVER_THE_AIR = 0,
  OAC_AGGREGATION_QUANTIZED = 1,
  OAC_AGGREGATION_EXACT = 2,
} OacAggregation;

/**
 * Opaque balanced-numeral codec.
 */
typedef struct OacCodec OacCodec;

/**
 * Opaque aggregation link.
 */
typedef struct OacLink OacLink;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *oac_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t oac_last_error_message(char *buf, size_t len);

/**
 * Create a codec for odd `base`, `digits` numerals and clip level `v_max`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
OacStatus oac_codec_new(uint32_t base, uint32_t digits, double v_max, OacCodec **out);

/**
 * # Safety
 * `codec` must be null or a handle from [`oac_codec_new`] not yet freed.
 */
void oac_codec_free(OacCodec *codec);

/**
 * Quantization step of the codec, or NaN for a null handle.
 *
 * # Safety
 * `codec` must be null or a live handle.
 */
double oac_codec_step_size(const OacCodec *codec);

/**
 * Number of numerals per value.
 *
 * # Safety
 * `codec` must be null or a live handle.
 */
size_t oac_codec_digits(const OacCodec *codec);

/**
 * Encode `value` into `out[0..len]`, most significant numeral first.
 * `clipped` may be null.
 *
 * # Safety
 * `codec` must be a live handle, `out` must hold `len` integers.
 */
OacStatus oac_codec_encode(const OacCodec *codec,
                           double value,
                           int32_t *out,
                           size_t len,
                           bool *clipped);

/**
 * Decode `len` numerals (most significant first) into `*value`.
 *
 * # Safety
 * `codec` must be a live handle, `numerals` must hold `len` integers.
 */
OacStatus oac_codec_decode(const OacCodec *codec,
                           const int32_t *numerals,
                           size_t len,
                           double *value);

/**
 * Build a link from an experiment config in TOML (`config` may be null or
 * empty for defaults).
 *
 * # Safety
 * `config` must be null or a NUL-terminated string; `out` must be writable.
 */
OacStatus oac_link_new(const char *config, OacLink **out);

/**
 * # Safety
 * `link` must be null or a handle from [`oac_link_new`] not yet freed.
 */
void oac_link_free(OacLink *link);

/**
 * Number of devices the link expects per round.
 *
 * # Safety
 * `link` must be null or a live handle.
 */
size_t oac_link_devices(const OacLink *link);

/**
 * # Safety
 * `link` must be a live handle.
 */
OacStatus oac_link_set_aggregation(OacLink *link, OacAggregation mode);

/**
 * Aggregate one round. `gradients` is row-major `devices × len`; the
 * estimate of the average gradient is written to `estimate[0..len]`.
 *
 * # Safety
 * `gradients` must hold `devices * len` doubles and `estimate` `len` doubles.
 */
OacStatus oac_link_round(const OacLink *link,
                         const double *gradients,
                         size_t devices,
                         size_t len,
                         uint64_t seed,
                         double *estimate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OAC_H */
