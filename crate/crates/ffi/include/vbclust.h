#ifndef VBCLUST_H
#define VBCLUST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum VbStatus {
  VB_STATUS_OK = 0,
  VB_STATUS_NULL_POINTER = 1,
  VB_STATUS_INVALID_UTF8 = 2,
  VB_STATUS_SCHEMA = 3,
  VB_STATUS_PARAMETER = 4,
  VB_STATUS_DATA = 5,
  VB_STATUS_DEGENERATE = 6,
  VB_STATUS_CONTRACT = 7,
  VB_STATUS_WIDTH = 8,
  VB_STATUS_NUMERIC = 9,
  VB_STATUS_IO = 10,
  VB_STATUS_PARSE = 11,
  VB_STATUS_OUT_OF_RANGE = 12,
  VB_STATUS_PANIC = 13,
} VbStatus;

/*
 Opaque trained clustering model.
 */
typedef struct VbModel VbModel;

/*
 Opaque result of [`vb_segment`].
 */
typedef struct VbSegmentation VbSegmentation;

/*
 Opaque per-step cluster history of one sequence.
 */
typedef struct VbTrace VbTrace;

/*
 Segmenter parameters. Fill with [`vb_segment_params_default`] and adjust.
 */
typedef struct VbSegmentParams {
  size_t stride;
  size_t lambda;
  double delta;
  double speed_sign_fraction;
  double stop_speed;
  double speed_var_threshold;
  double turn_threshold;
  size_t peak_radius;
} VbSegmentParams;

/*
 One AIS fix. Speed in knots, course in degrees.
 */
typedef struct VbFix {
  int64_t timestamp;
  double lat;
  double lon;
  double sog;
  double cog;
} VbFix;

/*
 One labelled sub-trajectory: inclusive fix range and behavior code 0..=9.
 */
typedef struct VbSegment {
  size_t start;
  size_t end;
  uint32_t behavior;
} VbSegment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null if it succeeded.
 The pointer stays valid until the next call into this library on the same thread.
 */
const char *vb_last_error_message(void);

/*
 Great-circle distance in metres between two points in degrees.
 */
double vb_haversine_m(double lat1, double lon1, double lat2, double lon2);

/*
 Purity of `assignments` against `truth`, both of length `n`.

 # Safety
 `assignments` and `truth` must point to `n` readable values and `out` to one writable double.
 */
enum VbStatus vb_purity(const uint32_t *assignments, const uint32_t *truth, size_t n, double *out);

/*
 Adjusted Rand index.

 # Safety
 Same contract as [`vb_purity`].
 */
enum VbStatus vb_ari(const uint32_t *assignments, const uint32_t *truth, size_t n, double *out);

/*
 Normalized mutual information.

 # Safety
 Same contract as [`vb_purity`].
 */
enum VbStatus vb_nmi(const uint32_t *assignments, const uint32_t *truth, size_t n, double *out);

/*
 Writes the default segmenter parameters to `out`.

 # Safety
 `out` must be null or point to a writable `VbSegmentParams`.
 */
enum VbStatus vb_segment_params_default(struct VbSegmentParams *out);

/*
 Segments and labels `n` fixes of one vessel. `params` may be null for defaults.

 # Safety
 `fixes` must point to `n` readable fixes, `params` must be null or valid,
 and `out` must point to a writable handle slot.
 */
enum VbStatus vb_segment(const struct VbFix *fixes,
                         size_t n,
                         const struct VbSegmentParams *params,
                         struct VbSegmentation **out);

/*
 Number of segments, 0 for a null handle.

 # Safety
 `seg` must be null or a live handle from [`vb_segment`].
 */
size_t vb_segmentation_len(const struct VbSegmentation *seg);

/*
 Copies segment `index` to `out`.

 # Safety
 `seg` must be a live handle and `out` a writable `VbSegment`.
 */
enum VbStatus vb_segmentation_get(const struct VbSegmentation *seg,
                                  size_t index,
                                  struct VbSegment *out);

/*
 # Safety
 `seg` must be null or a handle from [`vb_segment`] not yet freed.
 */
void vb_segmentation_free(struct VbSegmentation *seg);

/*
 Loads a checkpoint file written by `vbclust train`.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum VbStatus vb_model_load(const char *path, struct VbModel **out);

/*
 Parses a checkpoint from its JSON text.

 # Safety
 `json` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum VbStatus vb_model_from_json(const char *json, struct VbModel **out);

/*
 Number of clusters K, 0 for a null handle.

 # Safety
 `model` must be null or a live model handle.
 */
size_t vb_model_num_clusters(const struct VbModel *model);

/*
 Width of one feature step expected by [`vb_model_trace`], 0 for a null handle.

 # Safety
 `model` must be null or a live model handle.
 */
size_t vb_model_input_dim(const struct VbModel *model);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void vb_model_free(struct VbModel *model);

/*
 Runs the model over `steps` featurized steps. `features` is row-major,
 `steps` rows of `width` values; `relative_times` holds one entry per step.

 # Safety
 Pointers must cover the stated extents and `out` must be a writable handle slot.
 */
enum VbStatus vb_model_trace(const struct VbModel *model,
                             const int64_t *relative_times,
                             const double *features,
                             size_t steps,
                             size_t width,
                             struct VbTrace **out);

/*
 Number of steps, 0 for a null handle.

 # Safety
 `trace` must be null or a live trace handle.
 */
size_t vb_trace_len(const struct VbTrace *trace);

/*
 Hard cluster of step `index`.

 # Safety
 `trace` must be a live handle and `out` a writable value.
 */
enum VbStatus vb_trace_cluster(const struct VbTrace *trace, size_t index, size_t *out);

/*
 Copies the K soft assignment weights of step `index` into `out`, which holds `capacity` doubles.

 # Safety
 `trace` must be a live handle and `out` must point to `capacity` writable doubles.
 */
enum VbStatus vb_trace_assignment(const struct VbTrace *trace,
                                  size_t index,
                                  double *out,
                                  size_t capacity);

/*
 Majority-vote cluster over all steps.

 # Safety
 `trace` must be a live handle and `out` a writable value.
 */
enum VbStatus vb_trace_majority(const struct VbTrace *trace, size_t *out);

/*
 # Safety
 `trace` must be null or a handle not yet freed.
 */
void vb_trace_free(struct VbTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VBCLUST_H */
