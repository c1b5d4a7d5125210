#ifndef CRACKSEG_H
#define CRACKSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CsStatus {
  CS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CS_STATUS_NULL_ARGUMENT = 1,
  /**
   * Malformed arguments: bad string, index out of range, buffer too small.
   */
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_CONFIG = 3,
  /**
   * Image or mask data violates a precondition.
   */
  CS_STATUS_INPUT = 4,
  CS_STATUS_IO = 5,
  CS_STATUS_CHECKPOINT = 6,
  /**
   * Non-finite values or a numerical domain error.
   */
  CS_STATUS_NUMERIC = 7,
  /**
   * Internal failure; the message holds the panic payload.
   */
  CS_STATUS_INTERNAL = 8,
} CsStatus;

/**
 * Network with its weights.
 */
typedef struct CsModel CsModel;

/**
 * Scan orders of one strategy over one grid.
 */
typedef struct CsScanPaths CsScanPaths;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

/**
 * Message of the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *cs_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cs_string_free(char *s);

/**
 * Generate `num_paths` (2 or 4) scan orders for `strategy` (for example
 * `"sass"` or `"parallel-snake"`) over a `height x width` grid.
 *
 * # Safety
 * `strategy` must be a NUL-terminated string; `out` must be writable.
 */
enum CsStatus cs_scan_paths_new(const char *strategy,
                                size_t height,
                                size_t width,
                                size_t num_paths,
                                struct CsScanPaths **out);

/**
 * # Safety
 * `paths` must come from [`cs_scan_paths_new`] and not have been freed.
 */
void cs_scan_paths_free(struct CsScanPaths *paths);

/**
 * Number of paths in the set, 0 for null.
 *
 * # Safety
 * `paths` must be null or a live handle.
 */
size_t cs_scan_paths_count(const struct CsScanPaths *paths);

/**
 * Sequence length (grid cells) of every path, 0 for null.
 *
 * # Safety
 * `paths` must be null or a live handle.
 */
size_t cs_scan_paths_cells(const struct CsScanPaths *paths);

/**
 * Copy path `index`'s visiting order (row-major cell per step) into `buf`,
 * which must hold at least [`cs_scan_paths_cells`] entries.
 *
 * # Safety
 * `paths` must be a live handle and `buf` valid for `len` writes.
 */
enum CsStatus cs_scan_paths_order(const struct CsScanPaths *paths,
                                  size_t index,
                                  size_t *buf,
                                  size_t len);

/**
 * Copy path `index`'s inverse order (step per row-major cell) into `buf`.
 *
 * # Safety
 * `paths` must be a live handle and `buf` valid for `len` writes.
 */
enum CsStatus cs_scan_paths_inverse(const struct CsScanPaths *paths,
                                    size_t index,
                                    size_t *buf,
                                    size_t len);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CsStatus cs_model_load(const char *path, struct CsModel **out);

/**
 * Fresh model from a network configuration in JSON (`null` or `{}` for
 * defaults) with weights drawn from `seed`.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` writable.
 */
enum CsStatus cs_model_new(const char *config_json, uint64_t seed, struct CsModel **out);

/**
 * # Safety
 * `model` must come from this library and not have been freed.
 */
void cs_model_free(struct CsModel *model);

/**
 * Write the model's checkpoint file.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum CsStatus cs_model_save(const struct CsModel *model, const char *path);

/**
 * Number of scalar parameters, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cs_model_param_count(const struct CsModel *model);

/**
 * Patch size; image sides passed to [`cs_model_predict`] must be
 * multiples of it. 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cs_model_patch_size(const struct CsModel *model);

/**
 * Crack probabilities for one RGB image.
 *
 * `image` holds `3 * height * width` values in `[0, 1]`, channel-major
 * (all red values row by row, then green, then blue). `out` receives
 * `height * width` probabilities in row-major order.
 *
 * # Safety
 * `model` must be a live handle; `image` valid for `3 * height * width`
 * reads and `out` for `height * width` writes.
 */
enum CsStatus cs_model_predict(const struct CsModel *model,
                               const double *image,
                               size_t height,
                               size_t width,
                               double *out);

/**
 * Threshold sweep over `n_images` images.
 *
 * Image `i` has `sizes[i]` pixels; `probs` and `masks` hold all images
 * back to back (masks as 0/1 bytes). `thresholds` may be null with
 * `n_thresholds == 0` for the default 99-point grid. On success `*json`
 * receives the report, to be released with [`cs_string_free`].
 *
 * # Safety
 * Arrays must be valid for the lengths described above; `json` writable.
 */
enum CsStatus cs_evaluate(const double *probs,
                          const uint8_t *masks,
                          const size_t *sizes,
                          size_t n_images,
                          const double *thresholds,
                          size_t n_thresholds,
                          char **json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRACKSEG_H */
