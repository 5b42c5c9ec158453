#ifndef DRSTAGE_H
#define DRSTAGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of disease stages, and so of scores in a [`DrsDecision`].
 */
#define DRS_NUM_STAGES 5

typedef enum DrsStatus {
  DRS_STATUS_OK = 0,
  DRS_STATUS_NULL_ARGUMENT = 1,
  DRS_STATUS_INVALID_ARGUMENT = 2,
  DRS_STATUS_IO = 3,
  DRS_STATUS_FORMAT = 4,
  DRS_STATUS_NO_FOREGROUND = 5,
  DRS_STATUS_SHAPE_MISMATCH = 6,
  DRS_STATUS_INVALID_CONFIG = 7,
  DRS_STATUS_DOMAIN = 8,
  DRS_STATUS_PANIC = 9,
} DrsStatus;

typedef enum DrsScheme {
  DRS_SCHEME_CASCADE = 0,
  DRS_SCHEME_OVO = 1,
} DrsScheme;

/**
 * Loaded ensemble plus the preprocessing settings applied before it.
 */
typedef struct DrsEnsemble DrsEnsemble;

/**
 * A staged image: the label 0..=4 and one score per stage.
 */
typedef struct DrsDecision {
  uint32_t label;
  double scores[DRS_NUM_STAGES];
} DrsDecision;

/**
 * Summary of a confusion matrix. Undefined rates are NaN; sensitivity and
 * specificity treat class 0 as healthy and every other class as diseased.
 */
typedef struct DrsMetrics {
  double accuracy;
  double kappa;
  double sensitivity;
  double specificity;
} DrsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t drs_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *drs_version(void);

/**
 * Loads the ensemble described by a manifest file. `config_json` may be
 * null, or a JSON run configuration whose preprocessing settings are used
 * by the classify calls.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be null or
 * valid for one pointer write.
 */
enum DrsStatus drs_ensemble_load(const char *manifest_path,
                                 const char *config_json,
                                 struct DrsEnsemble **out);

/**
 * Releases an ensemble; null is ignored.
 *
 * # Safety
 * `ensemble` must be null or a pointer from [`drs_ensemble_load`] not yet
 * freed.
 */
void drs_ensemble_free(struct DrsEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be a live handle and `out` valid for one write.
 */
enum DrsStatus drs_ensemble_scheme(const struct DrsEnsemble *ensemble, enum DrsScheme *out);

/**
 * Preprocesses and stages a raw image file.
 *
 * # Safety
 * `ensemble` must be a live handle, `image_path` NUL-terminated, and `out`
 * valid for one write.
 */
enum DrsStatus drs_classify_file(const struct DrsEnsemble *ensemble,
                                 const char *image_path,
                                 struct DrsDecision *out);

/**
 * Preprocesses and stages a packed 8-bit RGB image of `width * height`
 * pixels, row-major.
 *
 * # Safety
 * `ensemble` must be a live handle, `rgb` valid for `width * height * 3`
 * bytes, and `out` valid for one write.
 */
enum DrsStatus drs_classify_rgb(const struct DrsEnsemble *ensemble,
                                const uint8_t *rgb,
                                size_t width,
                                size_t height,
                                struct DrsDecision *out);

/**
 * Cascade decision from four (normal, stage) probability pairs stored as
 * eight floats, stage 1 first.
 *
 * # Safety
 * `probs` must be valid for 8 reads and `label` for one write.
 */
enum DrsStatus drs_cascade_predict(const float *probs, uint32_t *label);

/**
 * One-versus-one decision from ten probability pairs (twenty floats, in
 * the canonical pair order). `scores` may be null; otherwise it receives the
 * five class scores.
 *
 * # Safety
 * `probs` must be valid for 20 reads, `label` for one write, and `scores`
 * null or valid for 5 writes.
 */
enum DrsStatus drs_ovo_predict(const float *probs, uint32_t *label, double *scores);

/**
 * `L (L - 1) / 2` one-versus-one classifiers for `L` classes.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum DrsStatus drs_num_ovo_classifiers(size_t classes, size_t *out);

/**
 * Metrics of a `k x k` confusion matrix given row-major, truth by row.
 *
 * # Safety
 * `counts` must be valid for `k * k` reads and `out` for one write.
 */
enum DrsStatus drs_confusion_metrics(const uint64_t *counts, size_t k, struct DrsMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRSTAGE_H */
