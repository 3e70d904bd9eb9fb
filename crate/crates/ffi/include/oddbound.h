#ifndef ODDBOUND_H
#define ODDBOUND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OddStatus {
  ODD_STATUS_OK = 0,
  ODD_STATUS_NULL_POINTER = 1,
  ODD_STATUS_INVALID_ARGUMENT = 2,
  ODD_STATUS_SHAPE = 3,
  ODD_STATUS_IO = 4,
  ODD_STATUS_PARSE = 5,
  ODD_STATUS_MISSING_LABELS = 6,
  ODD_STATUS_DIVERGENCE = 7,
  ODD_STATUS_PANIC = 8,
} OddStatus;

typedef enum OddCsvMode {
  ODD_CSV_MODE_FEATURES = 0,
  ODD_CSV_MODE_LOGITS = 1,
} OddCsvMode;

typedef enum OddMethod {
  ODD_METHOD_DIS2 = 0,
  ODD_METHOD_ODD_SOFT = 1,
  ODD_METHOD_ODD_HARD = 2,
} OddMethod;

/**
 * Trained classifier handle.
 */
typedef struct OddModel OddModel;

/**
 * Source and target dataset handle.
 */
typedef struct OddPair OddPair;

/**
 * Settings for [`odd_run_single`]. Obtain defaults from
 * [`odd_single_config_default`].
 */
typedef struct OddSingleConfig {
  enum OddCsvMode mode;
  enum OddMethod method;
  uint64_t seed;
  size_t restarts;
  size_t critic_epochs;
  double delta;
  double val_fraction;
  /**
   * Nonzero trains every critic layer instead of the last one.
   */
  uint8_t all_layers;
} OddSingleConfig;

/**
 * Flat copy of a bound report. `has_truth` is 0 when the target was not
 * fully labeled; `true_target_accuracy`, `valid` and `assumption2_gap` are
 * then meaningless.
 */
typedef struct OddReport {
  size_t n_source;
  size_t n_target;
  double source_val_accuracy;
  double discrepancy_full;
  double discrepancy_nonoverlap;
  double overlap_discrepancy;
  double selected_discrepancy;
  double concentration_term;
  double predicted_accuracy_lower;
  double predicted_accuracy_lower_no_delta;
  double source_agreement;
  double target_agreement;
  uint8_t has_truth;
  double true_target_accuracy;
  uint8_t valid;
  uint8_t has_assumption2_gap;
  double assumption2_gap;
} OddReport;

typedef struct OddMetrics {
  size_t n;
  double mae;
  double coverage;
  double overestimation_mae;
  size_t invalid;
} OddMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *odd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *odd_version(void);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum OddStatus odd_concentration(size_t n_source, size_t n_target, double delta, double *out);

/**
 * # Safety
 * `logits` must point to `k` doubles and `out` must be valid.
 */
enum OddStatus odd_logistic_loss(const double *logits, size_t k, size_t label, double *out);

/**
 * # Safety
 * `logits` must point to `k` doubles and `out` must be valid.
 */
enum OddStatus odd_disagreement_loss(const double *logits, size_t k, size_t label, double *out);

/**
 * Loads a model saved in the text format. Release with [`odd_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OddStatus odd_model_load(const char *path, struct OddModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void odd_model_free(struct OddModel *model);

/**
 * # Safety
 * `model`, `input_dim` and `output_dim` must be valid pointers.
 */
enum OddStatus odd_model_dims(const struct OddModel *model, size_t *input_dim, size_t *output_dim);

/**
 * Argmax predictions for `n` row-major inputs of width `dim`.
 *
 * # Safety
 * `x` must hold `n * dim` doubles and `out` room for `n` values.
 */
enum OddStatus odd_model_predict(const struct OddModel *model,
                                 const double *x,
                                 size_t n,
                                 size_t dim,
                                 size_t *out);

/**
 * Loads a `domain,label,f0,...` CSV. Release with [`odd_pair_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OddStatus odd_pair_load_csv(const char *path, enum OddCsvMode mode, struct OddPair **out);

/**
 * # Safety
 * `pair` must come from this library and not be used afterwards.
 */
void odd_pair_free(struct OddPair *pair);

/**
 * # Safety
 * All pointers must be valid.
 */
enum OddStatus odd_pair_sizes(const struct OddPair *pair,
                              size_t *n_source,
                              size_t *n_target,
                              size_t *dim);

struct OddSingleConfig odd_single_config_default(void);

/**
 * End-to-end bound estimate on a loaded pair. The pair's mode must match
 * `config.mode`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum OddStatus odd_run_single(const struct OddPair *pair,
                              const struct OddSingleConfig *config,
                              struct OddReport *out);

/**
 * MAE, coverage and overestimation MAE of `n` predictions.
 *
 * # Safety
 * `predicted` and `truth` must hold `n` doubles; `out` must be valid.
 */
enum OddStatus odd_evaluate(const double *predicted,
                            const double *truth,
                            size_t n,
                            struct OddMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODDBOUND_H */
