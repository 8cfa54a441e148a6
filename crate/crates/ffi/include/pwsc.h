#ifndef PWSC_H
#define PWSC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every API call. Non-OK leaves a message in pwsc_last_error().
 */
typedef enum PwscStatus {
  PwscOk = 0,
  /**
   * A required pointer was null or a scalar argument was out of range.
   */
  PwscBadArgument = 1,
  /**
   * Input data failed validation (shapes, sizes, values).
   */
  PwscInvalidData = 2,
  /**
   * Stream failed to parse or verify (corrupt, truncated, wrong model).
   */
  PwscBadStream = 3,
  PwscIoError = 4,
  /**
   * Internal panic was caught at the boundary.
   */
  PwscInternal = 5,
} PwscStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct PwscModel PwscModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pwsc_last_error(void);

/**
 * Loads a PWGT model file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum PwscStatus pwsc_model_load(const char *path, struct PwscModel **out);

/**
 * Builds a freshly initialized (untrained) model, mainly for testing.
 *
 * # Safety
 * `out` must be writable.
 */
enum PwscStatus pwsc_model_init(uint32_t latent_channels,
                                uint32_t hidden,
                                uint32_t stages,
                                uint64_t seed,
                                struct PwscModel **out);

/**
 * # Safety
 * `model` must come from pwsc_model_load/init and not be freed twice.
 */
void pwsc_model_free(struct PwscModel *model);

/**
 * Content fingerprint stamped into every stream (0 for null).
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t pwsc_model_fingerprint(const struct PwscModel *model);

/**
 * Compresses a 3xHxW image (channel-major f32 in [0,1]) to a stream.
 * On success `*out`/`*out_len` hold a buffer for pwsc_bytes_free.
 *
 * # Safety
 * `pixels` must hold 3*h*w floats; `out` and `out_len` must be writable.
 */
enum PwscStatus pwsc_compress(const struct PwscModel *model,
                              const float *pixels,
                              uint32_t h,
                              uint32_t w,
                              uint8_t **out,
                              uintptr_t *out_len);

/**
 * # Safety
 * `ptr`/`len` must be exactly what pwsc_compress returned (or ptr null).
 */
void pwsc_bytes_free(uint8_t *ptr, uintptr_t len);

/**
 * Decompresses a stream produced by pwsc_compress with the same model.
 * On success `*out` holds 3 * *out_h * *out_w floats for pwsc_pixels_free.
 *
 * # Safety
 * `stream` must hold `len` bytes; `out`, `out_h`, `out_w` must be writable.
 */
enum PwscStatus pwsc_decompress(const struct PwscModel *model,
                                const uint8_t *stream,
                                uintptr_t len,
                                float **out,
                                uint32_t *out_h,
                                uint32_t *out_w);

/**
 * # Safety
 * `ptr`/`h`/`w` must be exactly what pwsc_decompress returned (or ptr null).
 */
void pwsc_pixels_free(float *ptr, uint32_t h, uint32_t w);

/**
 * MSE, PSNR (dB, peak 1.0) and MS-SSIM between two 3xHxW images. Null
 * output pointers skip that metric.
 *
 * # Safety
 * `a` and `b` must hold 3*h*w floats each; non-null outputs writable.
 */
enum PwscStatus pwsc_quality(const float *a,
                             const float *b,
                             uint32_t h,
                             uint32_t w,
                             double *mse_out,
                             double *psnr_out,
                             double *ms_ssim_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PWSC_H */
