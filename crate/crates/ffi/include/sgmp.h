#ifndef SGMP_H
#define SGMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Mirrors the process exit-code contract.
 */
typedef enum SgmpStatus {
  SGMP_STATUS_OK = 0,
  SGMP_STATUS_INVALID_ARGUMENT = 1,
  SGMP_STATUS_CONFIG = 2,
  SGMP_STATUS_IO = 3,
  SGMP_STATUS_NUMERIC = 4,
  SGMP_STATUS_VERIFICATION = 5,
} SgmpStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SgmpDataset SgmpDataset;

/**
 * Opaque trained-model handle.
 */
typedef struct SgmpModel SgmpModel;

/**
 * Scalar evaluation summary.
 */
typedef struct SgmpEvalResult {
  double r_at_50;
  double r_at_100;
  uintptr_t images_evaluated;
  uintptr_t images_skipped;
} SgmpEvalResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Borrowed;
 * valid until the next failing call.
 */
const char *sgmp_last_error(void);

/**
 * Generates a synthetic dataset. `ambiguity` is the fraction of class
 * pairs whose predicate depends on context; `image_offset` selects a
 * disjoint slice of the seed's image stream.
 */
enum SgmpStatus sgmp_dataset_synth(uintptr_t num_images,
                                   uint64_t seed,
                                   uintptr_t image_offset,
                                   double ambiguity,
                                   struct SgmpDataset **out);

enum SgmpStatus sgmp_dataset_load(const char *path, struct SgmpDataset **out);

enum SgmpStatus sgmp_dataset_save(const struct SgmpDataset *dataset, const char *path);

uintptr_t sgmp_dataset_num_images(const struct SgmpDataset *dataset);

void sgmp_dataset_free(struct SgmpDataset *dataset);

/**
 * Trains a model on a dataset with the given hyperparameters.
 * `pooling`: 0 weighted, 1 avg, 2 max.
 */
enum SgmpStatus sgmp_train(const struct SgmpDataset *dataset,
                           uintptr_t epochs,
                           uintptr_t iterations,
                           uint32_t pooling,
                           double learning_rate,
                           uint64_t seed,
                           struct SgmpModel **out);

enum SgmpStatus sgmp_model_load(const char *path, struct SgmpModel **out);

enum SgmpStatus sgmp_model_save(const struct SgmpModel *model, const char *path);

uintptr_t sgmp_model_num_params(const struct SgmpModel *model);

void sgmp_model_free(struct SgmpModel *model);

/**
 * Evaluates a model. `task`: 0 predcls, 1 sgcls, 2 sggen.
 */
enum SgmpStatus sgmp_evaluate(const struct SgmpModel *model,
                              const struct SgmpDataset *dataset,
                              uint32_t task,
                              uintptr_t iterations,
                              uint32_t pooling,
                              struct SgmpEvalResult *out);

/**
 * Full text report; free with `sgmp_string_free`.
 */
enum SgmpStatus sgmp_evaluate_report(const struct SgmpModel *model,
                                     const struct SgmpDataset *dataset,
                                     uint32_t task,
                                     uintptr_t iterations,
                                     uint32_t pooling,
                                     char **out);

void sgmp_string_free(char *s);

/**
 * Verifies analytic gradients against central differences on a small
 * seeded model. Writes the max relative error and returns
 * `Verification` if it exceeds 1e-4.
 */
enum SgmpStatus sgmp_grad_check(uintptr_t iterations,
                                uint32_t pooling,
                                uint64_t seed,
                                double *max_rel_error);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SGMP_H */
