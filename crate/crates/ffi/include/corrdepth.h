#ifndef CORRDEPTH_H
#define CORRDEPTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CdStatus {
  CD_STATUS_OK = 0,
  CD_STATUS_NULL_POINTER = 1,
  CD_STATUS_INVALID_INPUT = 2,
  CD_STATUS_OUT_OF_BOUNDS = 3,
  CD_STATUS_DEGENERATE_CONFIGURATION = 4,
  CD_STATUS_NO_CONSENSUS = 5,
  CD_STATUS_ILL_CONDITIONED_JACOBIAN = 6,
  CD_STATUS_DEGENERATE_ALIGNMENT = 7,
  CD_STATUS_DIVISION_HAZARD = 8,
  CD_STATUS_INSUFFICIENT_SUPPORT = 9,
  CD_STATUS_PARSE = 10,
  CD_STATUS_IO = 11,
  CD_STATUS_BUFFER_TOO_SMALL = 12,
  CD_STATUS_PANIC = 13,
} CdStatus;

typedef enum CdInitMode {
  CD_INIT_MODE_ZEROS = 0,
  CD_INIT_MODE_UNIFORM_RANDOM = 1,
} CdInitMode;

typedef enum CdStopReason {
  CD_STOP_REASON_PLATEAU = 0,
  CD_STOP_REASON_MAX_ITERS = 1,
  /**
   * The solver failed mid-run; the depth is the last good iterate.
   */
  CD_STOP_REASON_ERROR = 2,
} CdStopReason;

/**
 * Matched source/target pixels.
 */
typedef struct CdCorrespondences CdCorrespondences;

/**
 * Depth grid with values in `[-1, 1]`.
 */
typedef struct CdDepthField CdDepthField;

/**
 * Synthetic surface with its views.
 */
typedef struct CdScene CdScene;

typedef struct CdRansacConfig {
  double threshold;
  size_t max_iterations;
  size_t min_sample_size;
  uint64_t seed;
  size_t refit_rounds;
} CdRansacConfig;

/**
 * `tau = INFINITY` disables the kernel. `squared_distance` nonzero applies
 * the kernel to the squared residual length.
 */
typedef struct CdRobustParams {
  double tau;
  uint8_t squared_distance;
} CdRobustParams;

typedef struct CdOptimConfig {
  double learning_rate;
  double momentum;
  double grad_clamp;
  size_t max_iters;
  size_t patience;
  enum CdInitMode init_mode;
  uint64_t seed;
  double smoothness;
  double init_jitter;
} CdOptimConfig;

typedef struct CdFitSummary {
  /**
   * NaN if the very first evaluation failed.
   */
  double final_loss;
  size_t iterations_run;
  enum CdStopReason stop_reason;
} CdFitSummary;

typedef struct CdMetrics {
  double l1;
  double rmse;
  double rel_l1;
  double sq_rel;
} CdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if the last call
 * succeeded cleanly. A fit that stopped on a solver error also leaves its
 * message here. Valid until the next `cd_*` call on the same thread.
 */
const char *cd_last_error_message(void);

/**
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum CdStatus cd_ransac_config_default(struct CdRansacConfig *out);

/**
 * # Safety
 * `out` must be null or point to writable memory for one params struct.
 */
enum CdStatus cd_robust_params_default(struct CdRobustParams *out);

/**
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum CdStatus cd_optim_config_default(struct CdOptimConfig *out);

/**
 * Kernel value `R(x)` for threshold `tau`; NaN for a non-positive `tau`.
 */
double cd_robust_weight(double x, double tau);

/**
 * Kernel derivative `R'(x)`; NaN for a non-positive `tau`.
 */
double cd_robust_weight_grad(double x, double tau);

/**
 * Copies `width * height` row-major values into a new depth field.
 *
 * # Safety
 * `values` must point to `width * height` readable doubles; `out` must be
 * writable.
 */
enum CdStatus cd_depth_new(size_t width,
                           size_t height,
                           const double *values,
                           struct CdDepthField **out);

/**
 * # Safety
 * `depth` must be null or a handle from this library, not yet freed.
 */
void cd_depth_free(struct CdDepthField *depth);

/**
 * # Safety
 * `depth` must be a live handle; `width`/`height` writable.
 */
enum CdStatus cd_depth_shape(const struct CdDepthField *depth, size_t *width, size_t *height);

/**
 * Copies the row-major values into `buf`, which must hold at least
 * `width * height` doubles.
 *
 * # Safety
 * `depth` must be a live handle; `buf` must be writable for `len` doubles.
 */
enum CdStatus cd_depth_values(const struct CdDepthField *depth, double *buf, size_t len);

/**
 * Builds a correspondence set from `n` interleaved `(x, y)` pairs per side.
 *
 * # Safety
 * `source_xy` and `target_xy` must each point to `2 * n` readable doubles;
 * `out` must be writable.
 */
enum CdStatus cd_correspondences_new(const double *source_xy,
                                     const double *target_xy,
                                     size_t n,
                                     struct CdCorrespondences **out);

/**
 * # Safety
 * `corr` must be null or a handle from this library, not yet freed.
 */
void cd_correspondences_free(struct CdCorrespondences *corr);

/**
 * Number of correspondences, or 0 for a null handle.
 *
 * # Safety
 * `corr` must be null or a live handle.
 */
size_t cd_correspondences_len(const struct CdCorrespondences *corr);

/**
 * Parses a scene description (JSON, nul-terminated).
 *
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
enum CdStatus cd_scene_from_json(const char *json, struct CdScene **out);

/**
 * # Safety
 * `scene` must be null or a handle from this library, not yet freed.
 */
void cd_scene_free(struct CdScene *scene);

/**
 * Ground-truth depth of view `view`.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
enum CdStatus cd_scene_render_depth(const struct CdScene *scene,
                                    size_t view,
                                    struct CdDepthField **out);

/**
 * Writes 1 for surface pixels of view `view` and 0 for background into
 * `buf`, which must hold `width * height` bytes.
 *
 * # Safety
 * `scene` must be a live handle; `buf` must be writable for `len` bytes.
 */
enum CdStatus cd_scene_surface_mask(const struct CdScene *scene,
                                    size_t view,
                                    uint8_t *buf,
                                    size_t len);

/**
 * Exact correspondences from view `source` to view `target`: `n_points`
 * seeded samples of the visible surface, or every visible pixel when
 * `n_points` is 0.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
enum CdStatus cd_scene_correspondences(const struct CdScene *scene,
                                       size_t source,
                                       size_t target,
                                       size_t n_points,
                                       struct CdCorrespondences **out);

/**
 * Robust correspondence loss under a RANSAC-fitted camera and its gradient
 * with respect to every depth value. `grad` may be null when `grad_len` is
 * 0; otherwise it must hold `width * height` doubles.
 *
 * # Safety
 * Handles must be live, config pointers readable, `loss` writable and
 * `grad` writable for `grad_len` doubles.
 */
enum CdStatus cd_loss_and_grad(const struct CdCorrespondences *corr,
                               const struct CdDepthField *depth,
                               const struct CdRansacConfig *ransac,
                               const struct CdRobustParams *robust,
                               double *loss,
                               double *grad,
                               size_t grad_len);

/**
 * Fits a `width x height` depth field to `n_pairs` correspondence sets,
 * weighting pair `i` by `weights[i]` (null weights mean 1 each).
 *
 * A solver failure part-way through still returns `Ok` with
 * `stop_reason = Error` and the last good depth.
 *
 * # Safety
 * `pairs` must point to `n_pairs` live handles, `weights` to `n_pairs`
 * doubles or be null, config pointers readable and outputs writable.
 */
enum CdStatus cd_fit_depth(const struct CdCorrespondences *const *pairs,
                           const double *weights,
                           size_t n_pairs,
                           size_t width,
                           size_t height,
                           const struct CdOptimConfig *optim,
                           const struct CdRansacConfig *ransac,
                           const struct CdRobustParams *robust,
                           struct CdDepthField **out_depth,
                           struct CdFitSummary *out_summary);

/**
 * Aligns `pred` to `gt` (median-shifted least squares on the masked pixels)
 * and reports L1, RMSE, relative L1 and squared relative error.
 * `gt_values` and `mask` hold `width * height` entries in row-major order;
 * a nonzero mask byte selects the pixel.
 *
 * # Safety
 * `pred` must be a live handle, the arrays readable for the field size and
 * `out` writable.
 */
enum CdStatus cd_evaluate(const struct CdDepthField *pred,
                          const double *gt_values,
                          const uint8_t *mask,
                          struct CdMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRDEPTH_H */
