#ifndef TRAJSEG_H
#define TRAJSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  TS_STATUS_DIMENSION_MISMATCH = 3,
  TS_STATUS_INVALID_SEGMENTATION = 4,
  TS_STATUS_BUFFER_TOO_SMALL = 5,
  TS_STATUS_NUMERIC = 6,
  TS_STATUS_PANIC = 7,
} TsStatus;

/**
 * Opaque segmentation handle.
 */
typedef struct TsSegmentation TsSegmentation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *ts_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Builds a segmentation from per-frame labels (maximal runs of equal labels).
 *
 * # Safety
 * `labels` must point to `n` values; `out` must be writable.
 */
enum TsStatus ts_segmentation_from_labels(const int64_t *labels,
                                          size_t n,
                                          struct TsSegmentation **out);

/**
 * Builds a segmentation of `frames` frames cut before each of the `n_boundaries`
 * ascending start frames; `labels` holds `n_boundaries + 1` segment labels.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `out` must be writable.
 */
enum TsStatus ts_segmentation_from_boundaries(size_t frames,
                                              const size_t *boundaries,
                                              size_t n_boundaries,
                                              const int64_t *labels,
                                              struct TsSegmentation **out);

/**
 * Releases a handle; NULL is ignored.
 *
 * # Safety
 * `seg` must be NULL or a handle not yet freed.
 */
void ts_segmentation_free(struct TsSegmentation *seg);

/**
 * Number of segments and of frames covered.
 *
 * # Safety
 * `seg` must be a live handle; outputs must be writable.
 */
enum TsStatus ts_segmentation_shape(const struct TsSegmentation *seg,
                                    size_t *segments,
                                    size_t *frames);

/**
 * Writes the per-frame labels into `out` (`capacity` >= frames).
 *
 * # Safety
 * `seg` must be a live handle; `out` must hold `capacity` values.
 */
enum TsStatus ts_segmentation_labels(const struct TsSegmentation *seg,
                                     int64_t *out,
                                     size_t capacity);

/**
 * Writes segment start frames after the first (`capacity` >= segments - 1).
 *
 * # Safety
 * `seg` must be a live handle; `out` must hold `capacity` values.
 */
enum TsStatus ts_segmentation_boundaries(const struct TsSegmentation *seg,
                                         size_t *out,
                                         size_t capacity);

/**
 * Normalized mutual information of two equal-length label sequences.
 *
 * # Safety
 * `a` and `b` must point to `n` values; `out` must be writable.
 */
enum TsStatus ts_nmi(const int64_t *a, const int64_t *b, size_t n, double *out);

/**
 * Segmentation accuracy of `pred` against `truth`; a match counts when its IOU exceeds `iou_threshold`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum TsStatus ts_seg_acc(const struct TsSegmentation *pred,
                         const struct TsSegmentation *truth,
                         double iou_threshold,
                         double *out);

/**
 * db10 denoising of one channel by zeroing `levels` detail bands; writes `n` samples.
 *
 * # Safety
 * `signal` and `out` must each hold `n` values; they may alias.
 */
enum TsStatus ts_denoise(const double *signal, size_t n, size_t levels, double *out);

/**
 * Transition-state clustering over `n_demos` demonstrations sharing `cols` channels.
 * Demonstration `i` is `demos[i]`, `rows[i] x cols`. Writes `n_demos` handles to `out`.
 *
 * # Safety
 * `demos` and `rows` must hold `n_demos` entries, each `demos[i]` `rows[i] * cols`
 * values; `out` must hold `n_demos` writable slots.
 */
enum TsStatus ts_tsc_segment(const double *const *demos,
                             const size_t *rows,
                             size_t n_demos,
                             size_t cols,
                             uint64_t seed,
                             struct TsSegmentation **out);

/**
 * Merges adjacent segments of `seg` over the `rows x cols` feature matrix while the
 * best fused similarity exceeds `tau` (default measures otherwise).
 *
 * # Safety
 * `seg` must be a live handle, `data` must hold `rows * cols` values, and
 * `out` / `merges` must be writable (`merges` may be NULL).
 */
enum TsStatus ts_promote(const struct TsSegmentation *seg,
                         const double *data,
                         size_t rows,
                         size_t cols,
                         double tau,
                         struct TsSegmentation **out,
                         size_t *merges);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJSEG_H */
