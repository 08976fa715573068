#ifndef OODR_H
#define OODR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OodrStatus {
  OODR_STATUS_OK = 0,
  OODR_STATUS_NULL_POINTER = 1,
  OODR_STATUS_INVALID_ARGUMENT = 2,
  OODR_STATUS_IO = 3,
  OODR_STATUS_FORMAT = 4,
  OODR_STATUS_DIMENSION_MISMATCH = 5,
  OODR_STATUS_NON_FINITE = 6,
  OODR_STATUS_DEGENERATE = 7,
  OODR_STATUS_PANIC = 8,
} OodrStatus;

typedef struct OodrFeatures OodrFeatures;

typedef struct OodrModel OodrModel;

typedef struct OodrReferenceGroup OodrReferenceGroup;

// Library version, a static NUL-terminated string.
const char *oodr_version(void);

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into the library on this thread.
const char *oodr_last_error(void);

// Builds a LOF reference group from `rows * dim` row-major embeddings.
//
// # Safety
// `name` must be a NUL-terminated string, `embeddings` valid for
// `rows * dim` reads and `out` valid for one write.
enum OodrStatus oodr_reference_build(const char *name,
                                     const double *embeddings,
                                     size_t rows,
                                     size_t dim,
                                     size_t k,
                                     struct OodrReferenceGroup **out);

// # Safety
// `group` must be null or a handle from [`oodr_reference_build`] not yet freed.
void oodr_reference_free(struct OodrReferenceGroup *group);

// Number of reference points, 0 for a null handle.
//
// # Safety
// `group` must be null or a live handle.
size_t oodr_reference_len(const struct OodrReferenceGroup *group);

// Embedding dimension, 0 for a null handle.
//
// # Safety
// `group` must be null or a live handle.
size_t oodr_reference_dim(const struct OodrReferenceGroup *group);

// LOF score of one query of length `dim`.
//
// # Safety
// `group` must be a live handle, `query` valid for `dim` reads and `out`
// valid for one write.
enum OodrStatus oodr_reference_score(const struct OodrReferenceGroup *group,
                                     const double *query,
                                     size_t dim,
                                     double *out);

// LOF scores of `rows` row-major queries of length `dim` into `out[rows]`.
//
// # Safety
// `queries` must be valid for `rows * dim` reads and `out` for `rows` writes.
enum OodrStatus oodr_reference_score_batch(const struct OodrReferenceGroup *group,
                                           const double *queries,
                                           size_t rows,
                                           size_t dim,
                                           double *out);

// Loads a metric head checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for one write.
enum OodrStatus oodr_model_load(const char *path, struct OodrModel **out);

// # Safety
// `model` must be null or a handle from [`oodr_model_load`] not yet freed.
void oodr_model_free(struct OodrModel *model);

// Input width, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t oodr_model_input_dim(const struct OodrModel *model);

// Embedding width, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t oodr_model_embed_dim(const struct OodrModel *model);

// Writes the L2-constrained embedding of `input[input_dim]` into
// `out[embed_dim]`.
//
// # Safety
// `model` must be a live handle, `input` valid for `input_dim` reads and
// `out` valid for `embed_dim` writes.
enum OodrStatus oodr_model_embed(const struct OodrModel *model,
                                 const double *input,
                                 size_t input_dim,
                                 double *out,
                                 size_t embed_dim);

// Loads a feature file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for one write.
enum OodrStatus oodr_features_load(const char *path, struct OodrFeatures **out);

// # Safety
// `features` must be null or a handle from [`oodr_features_load`] not yet freed.
void oodr_features_free(struct OodrFeatures *features);

// Row count, 0 for a null handle.
//
// # Safety
// `features` must be null or a live handle.
size_t oodr_features_rows(const struct OodrFeatures *features);

// Row width, 0 for a null handle.
//
// # Safety
// `features` must be null or a live handle.
size_t oodr_features_dim(const struct OodrFeatures *features);

// Id of row `i`, or null when out of range. Owned by the handle.
//
// # Safety
// `features` must be null or a live handle.
const char *oodr_features_id(const struct OodrFeatures *features, size_t i);

// Pointer to the `dim` values of row `i`, or null when out of range.
// Owned by the handle.
//
// # Safety
// `features` must be null or a live handle.
const float *oodr_features_row(const struct OodrFeatures *features, size_t i);

// Area under the ROC curve, abnormal being the positive class and larger
// scores more abnormal.
//
// # Safety
// `normal` and `abnormal` must be valid for their lengths and `out` for one write.
enum OodrStatus oodr_roc_auc(const double *normal,
                             size_t n_normal,
                             const double *abnormal,
                             size_t n_abnormal,
                             double *out);

// Smallest false positive rate among thresholds that flag every abnormal.
//
// # Safety
// `normal` and `abnormal` must be valid for their lengths and `out` for one write.
enum OodrStatus oodr_fpr_at_tpr1(const double *normal,
                                 size_t n_normal,
                                 const double *abnormal,
                                 size_t n_abnormal,
                                 double *out);

#endif  /* OODR_H */
