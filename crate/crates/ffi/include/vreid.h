#ifndef VREID_H
#define VREID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VreidStatus {
  VREID_STATUS_OK = 0,
  VREID_STATUS_NULL_POINTER = 1,
  VREID_STATUS_INVALID_ARGUMENT = 2,
  VREID_STATUS_ZERO_VECTOR = 3,
  VREID_STATUS_DIMENSION_MISMATCH = 4,
  VREID_STATUS_DEGENERATE_BATCH = 5,
  VREID_STATUS_NO_VALID_GALLERY = 6,
  VREID_STATUS_IO = 7,
  VREID_STATUS_CHECKPOINT = 8,
  VREID_STATUS_INTERNAL = 9,
  VREID_STATUS_PANIC = 10,
} VreidStatus;

// A loaded model. Create with `vreid_model_load`, release with
// `vreid_model_free`.
typedef struct VreidModel VreidModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next vreid call on the same thread.
const char *vreid_last_error(void);

// Pairwise cosine distances `1 - cos` between the rows of `a` (`rows_a x dim`)
// and `b` (`rows_b x dim`), written to `out` (`rows_a x rows_b`).
//
// # Safety
// All pointers must reference arrays of the stated sizes.
enum VreidStatus vreid_cosine_distance(const double *a,
                                       size_t rows_a,
                                       const double *b,
                                       size_t rows_b,
                                       size_t dim,
                                       double *out);

// DVDP of an identity-major PK batch of `features` (`P*K x dim`).
// `out_sum` receives the sum over anchors, `out_mean` the per-anchor mean;
// either may be null.
//
// # Safety
// `features` must hold `p * k * dim` values.
enum VreidStatus vreid_dvdp(const double *features,
                            size_t dim,
                            size_t p,
                            size_t k,
                            double *out_sum,
                            double *out_mean);

// Attribute-aware identity-hard triplet loss. Intra-class positive and
// negative are selected by cosine distance of `attrs` (`P*K x attr_dim`,
// values in [0, 1]); the hinge uses distances of `features`.
// `sum_reduction` nonzero sums over anchors, zero averages.
//
// # Safety
// Array sizes must match `p`, `k`, `dim` and `attr_dim`.
enum VreidStatus vreid_aitl_loss(const double *features,
                                 size_t dim,
                                 const double *attrs,
                                 size_t attr_dim,
                                 size_t p,
                                 size_t k,
                                 double margin,
                                 int32_t sum_reduction,
                                 double *out_loss);

// Batch-hard triplet loss (mean over anchors) of a PK batch.
//
// # Safety
// `features` must hold `p * k * dim` values.
enum VreidStatus vreid_batch_hard_loss(const double *features,
                                       size_t dim,
                                       size_t p,
                                       size_t k,
                                       double margin,
                                       double *out_loss);

// CMC and mAP. `out_ranks` receives Rank-1, -5, -10 and -20 hit rates.
// Gallery items sharing identity and camera with a query are ignored.
// `out_skipped` (may be null) receives the number of queries without any
// valid match.
//
// # Safety
// Arrays must match `n_query`, `n_gallery` and `dim`; `out_ranks` must hold
// 4 values.
enum VreidStatus vreid_cmc_map(const double *query,
                               const uint32_t *query_ids,
                               const uint32_t *query_cams,
                               size_t n_query,
                               const double *gallery,
                               const uint32_t *gallery_ids,
                               const uint32_t *gallery_cams,
                               size_t n_gallery,
                               size_t dim,
                               double *out_ranks,
                               double *out_map,
                               size_t *out_skipped);

// Loads a checkpoint written by `vreid train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum VreidStatus vreid_model_load(const char *path, struct VreidModel **out);

// # Safety
// `model` must come from `vreid_model_load` and not be used afterwards.
void vreid_model_free(struct VreidModel *model);

// Writes the expected frame width and height and the Re-ID feature length.
//
// # Safety
// `model` must be valid; outputs may be null.
enum VreidStatus vreid_model_info(const struct VreidModel *model,
                                  size_t *out_width,
                                  size_t *out_height,
                                  size_t *out_feature_dim);

// Embeds `batch` clips of `frames` RGB frames each. `pixels` holds
// `batch * frames * height * width * 3` bytes in clip, frame, row, column,
// channel order at the model's input size. `out` receives
// `batch x feature_dim` unit-norm features.
//
// # Safety
// `model` must be valid and the arrays must have the stated sizes.
enum VreidStatus vreid_model_embed(const struct VreidModel *model,
                                   const uint8_t *pixels,
                                   size_t batch,
                                   size_t frames,
                                   float *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VREID_H */
