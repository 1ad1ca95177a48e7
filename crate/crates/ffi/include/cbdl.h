#ifndef CBDL_H
#define CBDL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CBDL_FEATURE_SPECTROGRAM_POOL 0

#define CBDL_FEATURE_CHROMA 1

#define CBDL_FEATURE_INTERP_PSD 2

typedef enum cbdl_status {
  CBDL_STATUS_OK = 0,
  CBDL_STATUS_NULL_POINTER = 1,
  CBDL_STATUS_INVALID_ARGUMENT = 2,
  CBDL_STATUS_IO = 3,
  CBDL_STATUS_CORRUPT_FILE = 4,
  CBDL_STATUS_VERSION_MISMATCH = 5,
  CBDL_STATUS_DIMENSION_MISMATCH = 6,
  CBDL_STATUS_NUMERICAL = 7,
  CBDL_STATUS_PANIC = 8,
  CBDL_STATUS_OTHER = 9,
} cbdl_status;

/**
 * A loaded model. Create with `cbdl_model_load`, release with
 * `cbdl_model_free`.
 */
typedef struct cbdl_model cbdl_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cbdl_version(void);

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *cbdl_last_error(void);

/**
 * Loads a model file written by `cbdl train` or `cbdl experiment`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum cbdl_status cbdl_model_load(const char *path, struct cbdl_model **out);

/**
 * # Safety
 * `model` must come from `cbdl_model_load` and not be freed twice. NULL is
 * ignored.
 */
void cbdl_model_free(struct cbdl_model *model);

/**
 * Number of classes, 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t cbdl_model_num_classes(const struct cbdl_model *model);

/**
 * Feature dimension the model expects, 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t cbdl_model_input_dim(const struct cbdl_model *model);

/**
 * Name of class `index`, or NULL when out of range. Owned by the model.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
const char *cbdl_model_class_name(const struct cbdl_model *model, size_t index);

/**
 * Classifies `num_samples` feature vectors of length `dim`.
 * `labels_out` receives one zero-based class index per sample. When
 * `decisions_out` is not NULL it receives `num_samples × num_classes`
 * decision values, row-major.
 *
 * # Safety
 * `features` must hold `num_samples * dim` doubles, `labels_out`
 * `num_samples` entries and `decisions_out` (if given)
 * `num_samples * num_classes` doubles.
 */
enum cbdl_status cbdl_model_predict(const struct cbdl_model *model,
                                    const double *features,
                                    size_t num_samples,
                                    size_t dim,
                                    size_t *labels_out,
                                    double *decisions_out);

/**
 * Length of a feature vector of `kind` for a given analysis window, 0 for
 * an unknown kind.
 */
size_t cbdl_feature_dim(uint32_t kind, size_t window);

/**
 * Extracts one feature vector of `kind` from a mono signal into `out`,
 * which must have room for exactly `cbdl_feature_dim(kind, window)` values.
 *
 * # Safety
 * `samples` must hold `num_samples` doubles and `out` `out_len` doubles.
 */
enum cbdl_status cbdl_extract_features(const double *samples,
                                       size_t num_samples,
                                       uint32_t sample_rate,
                                       uint32_t kind,
                                       size_t window,
                                       size_t hop,
                                       double *out,
                                       size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CBDL_H */
