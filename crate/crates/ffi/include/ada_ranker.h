#ifndef ADA_RANKER_H
#define ADA_RANKER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum AdaStatus {
  ADA_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  ADA_STATUS_NULL_POINTER = 1,
  /*
   An argument was out of range or inconsistent.
   */
  ADA_STATUS_INVALID_ARGUMENT = 2,
  /*
   The file could not be read.
   */
  ADA_STATUS_IO = 3,
  /*
   The file is not a valid checkpoint.
   */
  ADA_STATUS_CHECKPOINT = 4,
  /*
   Adaptor scoring was requested from a checkpoint without an adaptor.
   */
  ADA_STATUS_NO_ADAPTOR = 5,
  /*
   Scoring produced a non-finite value.
   */
  ADA_STATUS_NON_FINITE = 6,
  /*
   An unexpected internal failure; the handle should not be reused.
   */
  ADA_STATUS_INTERNAL = 7,
} AdaStatus;

/*
 A loaded checkpoint.
 */
typedef struct AdaModel AdaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer. On
 success `*out` owns a handle that must be released with `ada_model_free`.
 */
enum AdaStatus ada_model_load(const char *path, struct AdaModel **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must come from `ada_model_load` and not be used afterwards.
 */
void ada_model_free(struct AdaModel *model);

/*
 Item vocabulary size; valid item ids are `0..num_items`.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum AdaStatus ada_model_num_items(const struct AdaModel *model, size_t *out);

/*
 Writes 1 to `out` when the checkpoint carries adaptor parameters, else 0.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum AdaStatus ada_model_has_adaptor(const struct AdaModel *model, int *out);

/*
 Scalar parameter counts of the base ranker and the adaptor (0 without one).

 # Safety
 `model` must be a live handle; `theta` and `phi` valid pointers.
 */
enum AdaStatus ada_model_param_counts(const struct AdaModel *model, size_t *theta, size_t *phi);

/*
 Scores `n_items` candidates for a user with the given history (oldest
 first). With `use_adaptor` nonzero the candidates are scored as one group
 through the adaptor; otherwise the base ranker scores them independently.

 # Safety
 `history` must point to `history_len` ids, `items` to `n_items` ids and
 `scores` to room for `n_items` floats.
 */
enum AdaStatus ada_model_score_group(const struct AdaModel *model,
                                     uint32_t user,
                                     const uint32_t *history,
                                     size_t history_len,
                                     const uint32_t *items,
                                     size_t n_items,
                                     int use_adaptor,
                                     float *scores);

/*
 AUC of the single positive (label 1) against the negatives, ties counting half.

 # Safety
 `scores` and `labels` must point to `n` elements; `out` must be valid.
 */
enum AdaStatus ada_group_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/*
 NDCG of the single positive; ties are broken by ascending item id.

 # Safety
 `scores`, `labels` and `items` must point to `n` elements; `out` must be valid.
 */
enum AdaStatus ada_group_ndcg(const double *scores,
                              const uint8_t *labels,
                              const uint32_t *items,
                              size_t n,
                              double *out);

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *ada_last_error(void);

/*
 Static name of a status code; unknown codes map to "unknown status".
 */
const char *ada_status_name(int status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADA_RANKER_H */
