#ifndef FAIRVIT_H
#define FAIRVIT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FvitStatus {
  FVIT_STATUS_OK = 0,
  FVIT_STATUS_NULL_POINTER = 1,
  FVIT_STATUS_INVALID_ARGUMENT = 2,
  FVIT_STATUS_IO = 3,
  FVIT_STATUS_FORMAT = 4,
  FVIT_STATUS_SHAPE = 5,
  FVIT_STATUS_UNDEFINED_METRIC = 6,
  FVIT_STATUS_PANIC = 7,
} FvitStatus;

/**
 * Opaque model handle.
 */
typedef struct FvitModel FvitModel;

typedef struct FvitModelInfo {
  uint32_t image_size;
  uint32_t channels;
  uint32_t patch_size;
  uint32_t layers;
  uint32_t heads;
  uint32_t head_dim;
  uint32_t num_classes;
  uint32_t groups;
  /**
   * Number of image patches, i.e. the length of a heat vector.
   */
  uint32_t patches;
} FvitModelInfo;

typedef struct FvitFairnessReport {
  double accuracy;
  double balanced_accuracy;
  double demographic_parity;
  double equalized_opportunity;
  /**
   * Counts indexed `s * 4 + y_true * 2 + y_pred`.
   */
  uint64_t counts[8];
} FvitFairnessReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *fvit_last_error_message(void);

/**
 * Loads an FVIT checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FvitStatus fvit_model_load(const char *path, struct FvitModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`fvit_model_load`] and not be freed twice.
 */
void fvit_model_free(struct FvitModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum FvitStatus fvit_model_info(const struct FvitModel *model, struct FvitModelInfo *out);

/**
 * Raw class scores and the predicted label for one CHW image in `[0, 1]`.
 * `scores` may be null; otherwise it must hold `scores_len >= num_classes`.
 *
 * # Safety
 * `pixels` must hold `pixels_len` floats, `scores` `scores_len` floats,
 * and `label` must be writable.
 */
enum FvitStatus fvit_model_predict(const struct FvitModel *model,
                                   const float *pixels,
                                   size_t pixels_len,
                                   float *scores,
                                   size_t scores_len,
                                   uint32_t *label);

/**
 * Per-patch rollout heat for `target`. `heat` must hold `patches` values.
 *
 * # Safety
 * `pixels` must hold `pixels_len` floats and `heat` `heat_len` doubles.
 */
enum FvitStatus fvit_model_rollout(const struct FvitModel *model,
                                   const float *pixels,
                                   size_t pixels_len,
                                   uint32_t target,
                                   double *heat,
                                   size_t heat_len);

/**
 * Accuracy, balanced accuracy, demographic parity and equalized opportunity
 * over `n` records. All label arrays hold 0/1 bytes.
 *
 * # Safety
 * The three arrays must hold `n` bytes each and `out` must be writable.
 */
enum FvitStatus fvit_fairness_report(const uint8_t *y_pred,
                                     const uint8_t *y_true,
                                     const uint8_t *s,
                                     size_t n,
                                     struct FvitFairnessReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRVIT_H */
