#ifndef OBALEX_H
#define OBALEX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum ObxStatus {
  OBX_STATUS_OK = 0,
  OBX_STATUS_NULL_POINTER = 1,
  OBX_STATUS_INVALID_ARGUMENT = 2,
  OBX_STATUS_SHAPE_MISMATCH = 3,
  OBX_STATUS_EMPTY_EXPLANATION = 4,
  OBX_STATUS_NO_CORRECT_CLASSIFICATIONS = 5,
  OBX_STATUS_IO = 6,
  OBX_STATUS_UNSUPPORTED_FORMAT = 7,
  OBX_STATUS_LABEL_OUT_OF_RANGE = 8,
  OBX_STATUS_BAD_MAGIC = 9,
  OBX_STATUS_VERSION_UNSUPPORTED = 10,
  OBX_STATUS_MALFORMED = 11,
  OBX_STATUS_PANIC = 12,
} ObxStatus;

// Normalized explanation map.
typedef struct ObxExplanation ObxExplanation;

// Fuzzy object mask.
typedef struct ObxMask ObxMask;

// Trained network.
typedef struct ObxModel ObxModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *obx_version(void);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next `obx_*` call on the same thread.
const char *obx_last_error_message(void);

// Mask from `height * width` row-major memberships in [0, 1].
//
// # Safety
// `values` must point to `height * width` doubles; `out` must be writable.
enum ObxStatus obx_mask_new(uintptr_t height,
                            uintptr_t width,
                            const double *values,
                            struct ObxMask **out);

// Mask from an 8-bit grayscale PNG (255 = fully inside the object).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ObxStatus obx_mask_load_png(const char *path, struct ObxMask **out);

// # Safety
// `mask` must come from this library and not be used afterwards.
void obx_mask_free(struct ObxMask *mask);

// Clamps negatives and scales so the maximum is 1. An all-nonpositive input
// gives an all-zero map, which `obx_score` rejects.
//
// # Safety
// `raw` must point to `height * width` doubles; `out` must be writable.
enum ObxStatus obx_explanation_normalize(uintptr_t height,
                                         uintptr_t width,
                                         const double *raw,
                                         struct ObxExplanation **out);

// Loads a heatmap PNG (with its JSON sidecar when present) and normalizes it.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ObxStatus obx_explanation_load_heatmap(const char *path, struct ObxExplanation **out);

// # Safety
// `map` must be a live handle; `height` and `width` must be writable.
enum ObxStatus obx_explanation_dims(const struct ObxExplanation *map,
                                    uintptr_t *height,
                                    uintptr_t *width);

// Copies the row-major values into `out`, which holds `len` doubles.
//
// # Safety
// `map` must be a live handle; `out` must have room for `len` doubles.
enum ObxStatus obx_explanation_values(const struct ObxExplanation *map, double *out, uintptr_t len);

// # Safety
// `map` must come from this library and not be used afterwards.
void obx_explanation_free(struct ObxExplanation *map);

// Fraction of explanation mass inside the mask.
//
// # Safety
// Handles must be live; `out` must be writable.
enum ObxStatus obx_score(const struct ObxMask *mask, const struct ObxExplanation *map, double *out);

// Mean of `scores[i]` over entries with `correct[i] != 0`.
//
// # Safety
// `scores` and `correct` must hold `n` elements; outputs must be writable.
enum ObxStatus obx_avg_score(const double *scores,
                             const uint8_t *correct,
                             uintptr_t n,
                             double *out_avg,
                             uintptr_t *out_n_correct);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ObxStatus obx_model_load(const char *path, struct ObxModel **out);

// # Safety
// `model` must come from this library and not be used afterwards.
void obx_model_free(struct ObxModel *model);

// Expected input as channels, height, width.
//
// # Safety
// `model` must be live; outputs must be writable.
enum ObxStatus obx_model_input_shape(const struct ObxModel *model,
                                     uintptr_t *channels,
                                     uintptr_t *height,
                                     uintptr_t *width,
                                     uintptr_t *num_classes);

// Most probable class and its probability.
//
// # Safety
// `image` must hold `height * width * channels` doubles; outputs writable.
enum ObxStatus obx_model_predict(const struct ObxModel *model,
                                 const double *image,
                                 uintptr_t height,
                                 uintptr_t width,
                                 uintptr_t channels,
                                 uintptr_t *out_class,
                                 double *out_probability);

// Explains `target_class`. `method` is a method name (`occlusion`,
// `gradcam`, `gradcampp`, `surrogate`) for defaults, or a JSON object such
// as `{"method":"occlusion","patch":4}`.
//
// # Safety
// `image` must hold `height * width * channels` doubles; `method` must be
// a NUL-terminated string; `out` must be writable.
enum ObxStatus obx_explain(const struct ObxModel *model,
                           const double *image,
                           uintptr_t height,
                           uintptr_t width,
                           uintptr_t channels,
                           const char *method,
                           uintptr_t target_class,
                           struct ObxExplanation **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OBALEX_H */
