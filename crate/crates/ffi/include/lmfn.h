#ifndef LMFN_H
#define LMFN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum lmfn_status {
  LMFN_STATUS_OK = 0,
  LMFN_STATUS_NULL_POINTER = 1,
  LMFN_STATUS_INVALID_ARGUMENT = 2,
  LMFN_STATUS_INVALID_CONFIG = 3,
  LMFN_STATUS_SHAPE = 4,
  LMFN_STATUS_IO = 5,
  LMFN_STATUS_IMAGE = 6,
  LMFN_STATUS_CHECKPOINT = 7,
  LMFN_STATUS_NUMERICAL = 8,
  LMFN_STATUS_INTERNAL = 9,
  LMFN_STATUS_PANIC = 10,
} lmfn_status;

// Opaque model handle.
typedef struct lmfn_model lmfn_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a freshly initialized model.
//
// `config_json` holds `ModelConfig` fields; missing fields take their
// defaults and a null pointer means the default configuration.
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out` must be
// valid for writes.
enum lmfn_status lmfn_model_new(const char *config_json, uint64_t seed, struct lmfn_model **out);

// Loads a model from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum lmfn_status lmfn_model_load(const char *path, struct lmfn_model **out);

// Writes the model's weights to a checkpoint file.
//
// # Safety
// `model` must come from this library; `path` must be a NUL-terminated
// string.
enum lmfn_status lmfn_model_save(const struct lmfn_model *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void lmfn_model_free(struct lmfn_model *model);

// Number of trainable scalars.
//
// # Safety
// `model` must come from this library; `out` must be valid for writes.
enum lmfn_status lmfn_model_param_count(const struct lmfn_model *model, size_t *out);

// Height and width accepted by [`lmfn_model_forward`] must be multiples
// of this value.
//
// # Safety
// `model` must come from this library; `out` must be valid for writes.
enum lmfn_status lmfn_model_size_multiple(const struct lmfn_model *model, size_t *out);

// Raw network pass over an `N×3×H×W` batch. Height and width must be
// multiples of [`lmfn_model_size_multiple`]; the output has the input's
// shape and is not clamped.
//
// # Safety
// `input` and `output` must each hold `batch·3·height·width` floats.
enum lmfn_status lmfn_model_forward(const struct lmfn_model *model,
                                    const float *input,
                                    size_t batch,
                                    size_t height,
                                    size_t width,
                                    float *output);

// Deblurs one planar image of any size with 1 or 3 channels. The output
// has the input's layout and is clamped to `[0, 1]`.
//
// # Safety
// `input` and `output` must each hold `width·height·channels` floats.
enum lmfn_status lmfn_deblur(const struct lmfn_model *model,
                             const float *input,
                             size_t width,
                             size_t height,
                             size_t channels,
                             float *output);

// Peak signal-to-noise ratio in dB for values in `[0, 1]`, capped at 100.
//
// # Safety
// `a` and `b` must each hold `width·height·channels` floats; `out` must be
// valid for writes.
enum lmfn_status lmfn_psnr(const float *a,
                           const float *b,
                           size_t width,
                           size_t height,
                           size_t channels,
                           double *out);

// Mean structural similarity over an 11×11 gaussian window, averaged over
// channels. Both sides must be at least 11 pixels.
//
// # Safety
// `a` and `b` must each hold `width·height·channels` floats; `out` must be
// valid for writes.
enum lmfn_status lmfn_ssim(const float *a,
                           const float *b,
                           size_t width,
                           size_t height,
                           size_t channels,
                           double *out);

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len` bytes. Returns the full
// message length including the terminator, so a caller can size its
// buffer with a first call passing `len = 0`.
//
// # Safety
// `buf` must be null or valid for `len` bytes of writes.
size_t lmfn_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *lmfn_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMFN_H */
