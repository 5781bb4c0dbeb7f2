#ifndef ADIRED_H
#define ADIRED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  ADIRED_STATUS_OK = 0,
  ADIRED_STATUS_NULL_POINTER = 1,
  ADIRED_STATUS_INVALID_ARGUMENT = 2,
  ADIRED_STATUS_IO = 3,
  ADIRED_STATUS_PARSE = 4,
  ADIRED_STATUS_SHAPE = 5,
  ADIRED_STATUS_MODEL = 6,
  ADIRED_STATUS_PANIC = 7,
} AdiredStatus;

typedef enum {
  ADIRED_SCALE_COARSE = 0,
  ADIRED_SCALE_FINE = 1,
} AdiredScale;

typedef struct AdiredDisNet AdiredDisNet;

typedef struct AdiredRegionSet AdiredRegionSet;

typedef struct AdiredSvm AdiredSvm;

/**
 * One selected square patch in pixel coordinates.
 */
typedef struct {
  uint32_t left;
  uint32_t top;
  uint32_t side;
  AdiredScale scale;
  /**
   * Normalized Dis-Map value of the source peak, in `[0, 255]`.
   */
  double score;
} AdiredPatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length including the NUL,
 * or 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t adired_last_error_message(char *buf, size_t len);

/**
 * Load a DisNet (`.onnx` or `ADIRTOY v1` fixture).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
AdiredStatus adired_disnet_load(const char *path, AdiredDisNet **out);

/**
 * # Safety
 * `net` must come from [`adired_disnet_load`] and not be used afterwards.
 */
void adired_disnet_free(AdiredDisNet *net);

/**
 * Side `l` of the DisNet's square activation grid.
 *
 * # Safety
 * Pointers must be valid.
 */
AdiredStatus adired_disnet_grid_size(const AdiredDisNet *net, size_t *out);

/**
 * # Safety
 * Pointers must be valid.
 */
AdiredStatus adired_disnet_num_classes(const AdiredDisNet *net, size_t *out);

/**
 * Normalized Dis-Map of an interleaved 8-bit RGB image, written row-major
 * into `out_map` (`grid_size * grid_size` values). A negative
 * `class_index` uses the DisNet's own prediction. The class actually used
 * is stored in `out_class`.
 *
 * # Safety
 * `rgb` must hold `width * height * 3` bytes and `out_map` `out_len`
 * doubles.
 */
AdiredStatus adired_dismap_compute(const AdiredDisNet *net,
                                   const uint8_t *rgb,
                                   uint32_t width,
                                   uint32_t height,
                                   int64_t class_index,
                                   double *out_map,
                                   size_t out_len,
                                   size_t *out_class);

/**
 * Min-max normalize `len` values to `[0, 255]`; `out` may alias `grid`.
 *
 * # Safety
 * `grid` and `out` must each hold `len` doubles.
 */
AdiredStatus adired_normalize_map(const double *grid, size_t len, double *out);

/**
 * Adaptive patch selection on a normalized `grid_size x grid_size` map
 * (row-major) for a `width x height` image.
 *
 * # Safety
 * `grid` must hold `grid_size * grid_size` doubles; `out` must be writable.
 */
AdiredStatus adired_select_regions(const double *grid,
                                   size_t grid_size,
                                   uint32_t width,
                                   uint32_t height,
                                   double t_coarse,
                                   double t_fine,
                                   bool fallback_on_empty,
                                   AdiredRegionSet **out);

/**
 * Number of patches, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t adired_region_set_len(const AdiredRegionSet *set);

/**
 * Patch `index`: coarse patches first, each scale by descending score.
 *
 * # Safety
 * `set` must be a live handle and `out` writable.
 */
AdiredStatus adired_region_set_get(const AdiredRegionSet *set, size_t index, AdiredPatch *out);

/**
 * # Safety
 * `set` must come from [`adired_select_regions`] and not be used afterwards.
 */
void adired_region_set_free(AdiredRegionSet *set);

/**
 * Load a trained one-vs-rest SVM written by `adired train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
AdiredStatus adired_svm_load(const char *path, AdiredSvm **out);

/**
 * # Safety
 * Pointers must be valid.
 */
AdiredStatus adired_svm_num_classes(const AdiredSvm *svm, size_t *out);

/**
 * # Safety
 * Pointers must be valid.
 */
AdiredStatus adired_svm_dim(const AdiredSvm *svm, size_t *out);

/**
 * Index of the highest-scoring class for a representation vector.
 *
 * # Safety
 * `features` must hold `len` doubles; `out_class` must be writable.
 */
AdiredStatus adired_svm_predict(const AdiredSvm *svm,
                                const double *features,
                                size_t len,
                                size_t *out_class);

/**
 * Copy the label of `class_index` into `buf` (NUL-terminated, truncated to
 * `len`) and store the full length including the NUL in `out_len`.
 *
 * # Safety
 * `buf` must be null or hold `len` bytes; `out_len` must be writable.
 */
AdiredStatus adired_svm_label(const AdiredSvm *svm,
                              size_t class_index,
                              char *buf,
                              size_t len,
                              size_t *out_len);

/**
 * # Safety
 * `svm` must come from [`adired_svm_load`] and not be used afterwards.
 */
void adired_svm_free(AdiredSvm *svm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADIRED_H */
