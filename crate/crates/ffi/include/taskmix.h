#ifndef TASKMIX_H
#define TASKMIX_H

/* Generated by cbindgen from taskmix-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes mirroring the library's error kinds.
 */
typedef enum TaskmixStatus {
  TASKMIX_STATUS_OK = 0,
  TASKMIX_STATUS_NULL_ARGUMENT = 1,
  TASKMIX_STATUS_CONFIG_ERROR = 2,
  TASKMIX_STATUS_DEPENDENCY_ERROR = 3,
  TASKMIX_STATUS_NUMERICAL_ERROR = 4,
  TASKMIX_STATUS_SHAPE_ERROR = 5,
  TASKMIX_STATUS_DEGENERATE_INPUT = 6,
  TASKMIX_STATUS_UNPERSONALIZABLE = 7,
  TASKMIX_STATUS_STATE_ERROR = 8,
  TASKMIX_STATUS_FORMAT_ERROR = 9,
  TASKMIX_STATUS_IO_ERROR = 10,
  TASKMIX_STATUS_UTF8_ERROR = 11,
} TaskmixStatus;

/**
 * An owned coefficient-matrix handle.
 */
typedef struct TaskmixCoefficients TaskmixCoefficients;

/**
 * An owned model handle.
 */
typedef struct TaskmixModel TaskmixModel;

/**
 * An owned task-vector handle.
 */
typedef struct TaskmixTaskVector TaskmixTaskVector;

/**
 * Personalization hyperparameters.
 *
 * `temperature > 0` selects the softmax initialization, `0` the argmax
 * limit, and any negative value the uniform limit. `loss` is 0 for the
 * pairwise rank loss, 1 for mean squared error.
 */
typedef struct TaskmixTrainConfig {
  double temperature;
  double start_lr;
  double end_lr;
  size_t batch_size;
  size_t steps;
  int32_t loss;
  uint64_t seed;
} TaskmixTrainConfig;

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *taskmix_last_error(void);

/**
 * Library version as a static C string.
 */
const char *taskmix_version(void);

/**
 * Load a params checkpoint. On success `*out` owns the model.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum TaskmixStatus taskmix_model_load(const char *path, struct TaskmixModel **out);

/**
 * Write a params checkpoint under the given record id.
 *
 * # Safety
 * `model` must be a live handle; `id` and `path` valid NUL-terminated strings.
 */
enum TaskmixStatus taskmix_model_save(const struct TaskmixModel *model,
                                      const char *id,
                                      const char *path);

/**
 * Number of layer blocks, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t taskmix_model_layer_count(const struct TaskmixModel *model);

/**
 * Total parameter count, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t taskmix_model_param_count(const struct TaskmixModel *model);

/**
 * Input feature width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t taskmix_model_input_dim(const struct TaskmixModel *model);

/**
 * Eval-mode scores for a row-major `[count, dim]` feature batch, written
 * into `out_scores` (length `count`).
 *
 * # Safety
 * Buffers must match the stated sizes; `model` must be a live handle.
 */
enum TaskmixStatus taskmix_model_predict(const struct TaskmixModel *model,
                                         const double *features,
                                         size_t count,
                                         size_t dim,
                                         double *out_scores);

/**
 * # Safety
 * `model` must come from this library and not already be freed.
 */
void taskmix_model_free(struct TaskmixModel *model);

/**
 * Extract the layer-wise delta between a base and a fine-tuned model.
 *
 * # Safety
 * Handles must be live; `task_id` a valid string; `out` a valid pointer.
 */
enum TaskmixStatus taskmix_task_vector_extract(const struct TaskmixModel *base,
                                               const struct TaskmixModel *fine_tuned,
                                               const char *task_id,
                                               struct TaskmixTaskVector **out);

/**
 * Rewrite a fine-tuned model so delta extraction round-trips bit-exactly
 * against this base.
 *
 * # Safety
 * Handles must be live; `out` a valid pointer.
 */
enum TaskmixStatus taskmix_model_canonicalize(const struct TaskmixModel *base,
                                              const struct TaskmixModel *fine_tuned,
                                              struct TaskmixModel **out);

/**
 * Load a delta checkpoint.
 *
 * # Safety
 * `path` must be a valid string, `out` a valid pointer.
 */
enum TaskmixStatus taskmix_task_vector_load(const char *path, struct TaskmixTaskVector **out);

/**
 * Write a delta checkpoint; the base provides the stored architecture.
 *
 * # Safety
 * Handles must be live; `path` a valid string.
 */
enum TaskmixStatus taskmix_task_vector_save(const struct TaskmixTaskVector *tv,
                                            const struct TaskmixModel *base,
                                            const char *path);

/**
 * # Safety
 * `tv` must come from this library and not already be freed.
 */
void taskmix_task_vector_free(struct TaskmixTaskVector *tv);

/**
 * Merge `base + sum_i coeffs[i][l] * tvs[i][l]`. `coeffs` is row-major
 * with one row per task vector and one column per layer.
 *
 * # Safety
 * `tvs` must point to `n_tvs` live handles, `coeffs` to
 * `n_tvs * layer_count` values; `out` must be a valid pointer.
 */
enum TaskmixStatus taskmix_merge(const struct TaskmixModel *base,
                                 const struct TaskmixTaskVector *const *tvs,
                                 size_t n_tvs,
                                 const double *coeffs,
                                 struct TaskmixModel **out);

/**
 * Zero-shot rank correlation of each reconstructed source model on the
 * support samples; `out_profile` receives `n_tvs` values.
 *
 * # Safety
 * Buffers must match the stated sizes; handles must be live.
 */
enum TaskmixStatus taskmix_zero_shot_profile(const struct TaskmixModel *base,
                                             const struct TaskmixTaskVector *const *tvs,
                                             size_t n_tvs,
                                             const double *features,
                                             const double *scores,
                                             size_t count,
                                             size_t dim,
                                             double *out_profile);

/**
 * Train the merge coefficients on a support set and return the trained
 * matrix as a handle.
 *
 * # Safety
 * Buffers must match the stated sizes; handles must be live; `out` must be
 * a valid pointer.
 */
enum TaskmixStatus taskmix_train_coefficients(const struct TaskmixModel *base,
                                              const struct TaskmixTaskVector *const *tvs,
                                              size_t n_tvs,
                                              const double *features,
                                              const double *scores,
                                              size_t count,
                                              size_t dim,
                                              const struct TaskmixTrainConfig *cfg,
                                              struct TaskmixCoefficients **out);

/**
 * Copy the coefficient values (row-major, one row per task) into
 * `out_values` of length `len`; `len` must equal rows x columns.
 *
 * # Safety
 * `cm` must be a live handle and `out_values` sized as stated.
 */
enum TaskmixStatus taskmix_coefficients_values(const struct TaskmixCoefficients *cm,
                                               double *out_values,
                                               size_t len);

/**
 * Rows (tasks) of a coefficient matrix, or 0 for null.
 *
 * # Safety
 * `cm` must be a live handle or null.
 */
size_t taskmix_coefficients_task_count(const struct TaskmixCoefficients *cm);

/**
 * Columns (layers) of a coefficient matrix, or 0 for null.
 *
 * # Safety
 * `cm` must be a live handle or null.
 */
size_t taskmix_coefficients_layer_count(const struct TaskmixCoefficients *cm);

/**
 * Merge using a trained coefficient handle.
 *
 * # Safety
 * Handles must be live and mutually consistent; `out` a valid pointer.
 */
enum TaskmixStatus taskmix_merge_with_coefficients(const struct TaskmixModel *base,
                                                   const struct TaskmixTaskVector *const *tvs,
                                                   size_t n_tvs,
                                                   const struct TaskmixCoefficients *cm,
                                                   struct TaskmixModel **out);

/**
 * # Safety
 * `cm` must come from this library and not already be freed.
 */
void taskmix_coefficients_free(struct TaskmixCoefficients *cm);

/**
 * Spearman rank correlation; writes the value and returns the degeneracy
 * convention (0 with `Ok`) for constant inputs.
 *
 * # Safety
 * `truth` and `preds` must hold `count` values; `out` must be valid.
 */
enum TaskmixStatus taskmix_srocc(const double *truth,
                                 const double *preds,
                                 size_t count,
                                 double *out);

/**
 * Pearson linear correlation with the same conventions as
 * [`taskmix_srocc`].
 *
 * # Safety
 * `truth` and `preds` must hold `count` values; `out` must be valid.
 */
enum TaskmixStatus taskmix_plcc(const double *truth,
                                const double *preds,
                                size_t count,
                                double *out);

#endif  /* TASKMIX_H */
