#ifndef POLYPSEG_H
#define POLYPSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  // A required pointer argument was null.
  PS_STATUS_NULL_ARGUMENT = 1,
  // An argument or file content failed validation.
  PS_STATUS_INVALID = 2,
  // Array dimensions disagree or are unsupported.
  PS_STATUS_SHAPE = 3,
  // A file could not be read or decoded.
  PS_STATUS_IO = 4,
  // A computation produced non-finite values.
  PS_STATUS_NUMERICAL = 5,
  // The output buffer is too small; required sizes were still written.
  PS_STATUS_BUFFER_TOO_SMALL = 6,
  // An internal panic was caught at the boundary.
  PS_STATUS_PANIC = 7,
} PsStatus;

// Opaque trained model.
typedef struct PsModel PsModel;

typedef struct PsRegionMetrics {
  double dice;
  double iou;
  double precision;
  double recall;
  double acc;
} PsRegionMetrics;

typedef struct PsAnatomicalMetrics {
  // Percentage of fold pixels predicted positive.
  double hf_miss_pct;
  // 1 when the fold region is empty (`hf_miss_pct` is then 0).
  uint8_t hf_region_empty;
  double npv;
  double fdr;
  double specificity;
} PsAnatomicalMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// success. Valid until the next call into this library on the thread.
const char *ps_last_error(void);

// Library version as a static NUL-terminated string.
const char *ps_version(void);

// Loads a checkpoint directory written by training (`ckpt-final` or
// `ckpt-best`). On success `*out` receives a handle owned by the caller.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PsStatus ps_model_load(const char *path, struct PsModel **out);

// Releases a handle from [`ps_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void ps_model_free(struct PsModel *model);

// Foreground probability for every pixel: writes `h·w` values to `prob`.
//
// # Safety
// `rgb` must hold `3·h·w` values and `prob` room for `h·w`.
enum PsStatus ps_model_infer(const struct PsModel *model,
                             const double *rgb,
                             size_t h,
                             size_t w,
                             double *prob);

// Attention map `Attn_level` (level 1 finest through 4 coarsest). Writes
// its size to `out_h`/`out_w`, then the values to `out` when `capacity`
// suffices; otherwise returns `BufferTooSmall`.
//
// # Safety
// `rgb` must hold `3·h·w` values, `out` room for `capacity`, and
// `out_h`/`out_w` must be writable.
enum PsStatus ps_model_attention(const struct PsModel *model,
                                 const double *rgb,
                                 size_t h,
                                 size_t w,
                                 size_t level,
                                 double *out,
                                 size_t capacity,
                                 size_t *out_h,
                                 size_t *out_w);

// Dice, IoU, precision, recall and accuracy of `pred` against `gt`.
//
// # Safety
// `pred` and `gt` must hold `h·w` values; `out` must be writable.
enum PsStatus ps_region_metrics(const uint8_t *pred,
                                const uint8_t *gt,
                                size_t h,
                                size_t w,
                                struct PsRegionMetrics *out);

// Boundary F1 with matching distance `tolerance` pixels.
//
// # Safety
// `pred` and `gt` must hold `h·w` values; `out` must be writable.
enum PsStatus ps_boundary_f1(const uint8_t *pred,
                             const uint8_t *gt,
                             size_t h,
                             size_t w,
                             double tolerance,
                             double *out);

// Fold miss rate and background-side scores. `hf` marks the fold region,
// which must not overlap `gt`.
//
// # Safety
// `pred`, `gt` and `hf` must hold `h·w` values; `out` must be writable.
enum PsStatus ps_anatomical_metrics(const uint8_t *pred,
                                    const uint8_t *gt,
                                    const uint8_t *hf,
                                    size_t h,
                                    size_t w,
                                    struct PsAnatomicalMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYPSEG_H */
