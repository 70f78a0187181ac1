#ifndef AUTOGCN_H
#define AUTOGCN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Split selector for [`agcn_trainer_evaluate`].
 */
typedef enum AgcnSplit {
  AGCN_SPLIT_TRAIN = 0,
  AGCN_SPLIT_VAL = 1,
  AGCN_SPLIT_TEST = 2,
} AgcnSplit;

/**
 * Result codes. Zero is success.
 */
typedef enum AgcnStatus {
  AGCN_STATUS_OK = 0,
  AGCN_STATUS_NULL_POINTER = 1,
  AGCN_STATUS_INVALID_ARGUMENT = 2,
  AGCN_STATUS_PARSE = 3,
  AGCN_STATUS_CONFIG = 4,
  AGCN_STATUS_SHAPE = 5,
  AGCN_STATUS_NON_FINITE = 6,
  AGCN_STATUS_CHECKPOINT = 7,
  AGCN_STATUS_DIVERGED = 8,
  AGCN_STATUS_IO = 9,
  AGCN_STATUS_PANIC = 10,
} AgcnStatus;

/**
 * Graph with splits and its normalized adjacency.
 */
typedef struct AgcnDataset AgcnDataset;

/**
 * One model, its hyperparameter distribution and optimizer state.
 */
typedef struct AgcnTrainer AgcnTrainer;

/**
 * Trainer settings; obtain defaults from [`agcn_train_options_default`].
 */
typedef struct AgcnTrainOptions {
  double lr_model;
  double lr_hyper;
  double lr_scale;
  double tau;
  uint64_t model_epochs;
  uint64_t hyper_epochs;
  double sigma_init;
  /**
   * False trains a plain GCN at fixed hyperparameters.
   */
  bool self_tuning;
} AgcnTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *agcn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *agcn_version(void);

struct AgcnTrainOptions agcn_train_options_default(void);

/**
 * Loads raw citation files and applies a stratified 60/20/20 split.
 *
 * # Safety
 * Path arguments must be NUL-terminated strings; `out` must be writable.
 */
enum AgcnStatus agcn_dataset_load(const char *content,
                                  const char *cites,
                                  uint64_t split_seed,
                                  struct AgcnDataset **out);

/**
 * Generates a planted-partition dataset in memory. `oracle`, if non-null,
 * receives the generator's held-out oracle accuracy.
 *
 * # Safety
 * `out` must be writable; `oracle` may be null.
 */
enum AgcnStatus agcn_dataset_synthetic(size_t nodes,
                                       size_t classes,
                                       size_t communities,
                                       double p_in,
                                       double p_out,
                                       size_t feature_dim,
                                       double noise,
                                       uint64_t generator_seed,
                                       uint64_t split_seed,
                                       double *oracle,
                                       struct AgcnDataset **out);

/**
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t agcn_dataset_num_nodes(const struct AgcnDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t agcn_dataset_num_edges(const struct AgcnDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t agcn_dataset_num_classes(const struct AgcnDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void agcn_dataset_free(struct AgcnDataset *ds);

/**
 * Creates a trainer shaped for `ds` with `layers` layers of width `hidden`.
 * `options` may be null for defaults.
 *
 * # Safety
 * `ds` must be a live dataset handle, `options` null or readable, `out` writable.
 */
enum AgcnStatus agcn_trainer_new(const struct AgcnDataset *ds,
                                 size_t layers,
                                 size_t hidden,
                                 uint64_t seed,
                                 const struct AgcnTrainOptions *options,
                                 struct AgcnTrainer **out);

/**
 * Runs `epochs` epochs of the alternating schedule. `val_acc`, if non-null,
 * receives the validation accuracy afterwards.
 *
 * # Safety
 * Handles must be live; `val_acc` null or writable.
 */
enum AgcnStatus agcn_trainer_run(struct AgcnTrainer *t,
                                 const struct AgcnDataset *ds,
                                 uint64_t epochs,
                                 double *val_acc);

/**
 * Accuracy on one split at the distribution center, without dropout.
 *
 * # Safety
 * Handles must be live; `acc` writable.
 */
enum AgcnStatus agcn_trainer_evaluate(const struct AgcnTrainer *t,
                                      const struct AgcnDataset *ds,
                                      enum AgcnSplit split,
                                      double *acc);

/**
 * Epochs completed so far; 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live trainer handle.
 */
uint64_t agcn_trainer_epoch(const struct AgcnTrainer *t);

/**
 * Copies the constrained hyperparameters (dropout per hidden layer, edge
 * drop, weight decay) into `buf`. `count` receives the number available;
 * at most `len` values are written.
 *
 * # Safety
 * `t` must be live, `buf` writable for `len` values (or null when `len` is 0),
 * `count` writable.
 */
enum AgcnStatus agcn_trainer_hyperparameters(const struct AgcnTrainer *t,
                                             double *buf,
                                             size_t len,
                                             size_t *count);

/**
 * Writes the full trainer state to a checkpoint file.
 *
 * # Safety
 * `t` must be live and `path` a NUL-terminated string.
 */
enum AgcnStatus agcn_trainer_save(const struct AgcnTrainer *t, const char *path);

/**
 * Restores a checkpoint written by [`agcn_trainer_save`] into a trainer of
 * the same shape.
 *
 * # Safety
 * `t` must be live and `path` a NUL-terminated string.
 */
enum AgcnStatus agcn_trainer_restore(struct AgcnTrainer *t, const char *path);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void agcn_trainer_free(struct AgcnTrainer *t);

/**
 * Runs a complete experiment from a config file into `out_dir`.
 * `test_acc`, if non-null, receives the summary's test accuracy (NaN if none).
 *
 * # Safety
 * Paths must be NUL-terminated strings; `test_acc` null or writable.
 */
enum AgcnStatus agcn_run_config(const char *config, const char *out_dir, double *test_acc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTOGCN_H */
