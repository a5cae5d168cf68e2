#ifndef SHIFTLAB_H
#define SHIFTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum ShiftlabStatus {
  SHIFTLAB_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  SHIFTLAB_STATUS_NULL_ARGUMENT = 1,
  /**
   * Malformed string, unknown name or out-of-range index.
   */
  SHIFTLAB_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Invalid configuration, temporal bounds or feature group.
   */
  SHIFTLAB_STATUS_CONFIG = 3,
  SHIFTLAB_STATUS_MISSING_INPUT = 4,
  /**
   * Malformed or inconsistent data, including schema mismatches.
   */
  SHIFTLAB_STATUS_DATA = 5,
  /**
   * The metric is undefined on the given labels.
   */
  SHIFTLAB_STATUS_UNDEFINED_METRIC = 6,
  /**
   * Model fitting or cross-validation failed.
   */
  SHIFTLAB_STATUS_MODEL = 7,
  SHIFTLAB_STATUS_IO = 8,
  /**
   * A panic was caught at the boundary.
   */
  SHIFTLAB_STATUS_PANIC = 9,
} ShiftlabStatus;

typedef enum ShiftlabPreset {
  SHIFTLAB_PRESET_DESK = 0,
  SHIFTLAB_PRESET_ZERO_NOISE = 1,
  SHIFTLAB_PRESET_PLANTED_MEDICATION_NOISE = 2,
} ShiftlabPreset;

typedef enum ShiftlabMeasure {
  SHIFTLAB_MEASURE_AUROC = 0,
  SHIFTLAB_MEASURE_BRIER = 1,
} ShiftlabMeasure;

/**
 * Run configuration.
 */
typedef struct ShiftlabConfig ShiftlabConfig;

/**
 * Results of an in-memory study run.
 */
typedef struct ShiftlabStudy ShiftlabStudy;

typedef struct ShiftlabInterval {
  double point;
  double lower;
  double upper;
  size_t n_replicates;
  size_t redraws;
} ShiftlabInterval;

typedef struct ShiftlabGap {
  struct ShiftlabInterval p_ret;
  struct ShiftlabInterval p_ret_prime;
  struct ShiftlabInterval p_pro;
  struct ShiftlabInterval delta;
  struct ShiftlabInterval delta_time;
  struct ShiftlabInterval delta_infra;
  bool negated;
} ShiftlabGap;

/**
 * Undefined correlation or slope is NaN.
 */
typedef struct ShiftlabConcordance {
  size_t n_pairs;
  double pearson;
  double slope;
  double intercept;
  double threshold;
  size_t n_discordant;
} ShiftlabConcordance;

/**
 * `label` is owned by the study handle and valid until it is freed.
 */
typedef struct ShiftlabSwapRow {
  const char *label;
  size_t n_columns;
  double auroc;
  double difference;
} ShiftlabSwapRow;

typedef struct ShiftlabGapValues {
  double p_ret;
  double p_ret_prime;
  double p_pro;
  double delta;
  double delta_time;
  double delta_infra;
  bool negated;
} ShiftlabGapValues;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *shiftlab_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful one. Valid until the next call on this thread.
 */
const char *shiftlab_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void shiftlab_string_free(char *s);

/**
 * `preset_id` is a [`ShiftlabPreset`] value.
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum ShiftlabStatus shiftlab_config_new(uint64_t seed,
                                        int32_t preset_id,
                                        struct ShiftlabConfig **out);

/**
 * Parses and validates a run configuration document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` valid for one pointer.
 */
enum ShiftlabStatus shiftlab_config_from_json(const char *json, struct ShiftlabConfig **out);

/**
 * # Safety
 * `config` must be a live handle; `out` valid for one pointer.
 */
enum ShiftlabStatus shiftlab_config_to_json(const struct ShiftlabConfig *config, char **out);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum ShiftlabStatus shiftlab_config_set_seed(struct ShiftlabConfig *config, uint64_t seed);

/**
 * Sets the bootstrap replicate count for evaluation and gap intervals.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum ShiftlabStatus shiftlab_config_set_n_replicates(struct ShiftlabConfig *config, size_t n);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum ShiftlabStatus shiftlab_config_set_cross_validate(struct ShiftlabConfig *config, bool enabled);

/**
 * # Safety
 * `config` must be NULL or a handle not yet freed.
 */
void shiftlab_config_free(struct ShiftlabConfig *config);

/**
 * Runs a stage (`simulate` .. `report`, or `all`) into `out_dir`, as the
 * command-line tool does.
 *
 * # Safety
 * `config` must be a live handle; `command_name` and `out_dir`
 * NUL-terminated strings.
 */
enum ShiftlabStatus shiftlab_run_command(const struct ShiftlabConfig *config,
                                         const char *command_name,
                                         const char *out_dir);

/**
 * Runs the whole study in memory.
 *
 * # Safety
 * `config` must be a live handle; `out` valid for one pointer.
 */
enum ShiftlabStatus shiftlab_study_run(const struct ShiftlabConfig *config,
                                       struct ShiftlabStudy **out);

/**
 * `which` is a [`ShiftlabMeasure`] value.
 *
 * # Safety
 * `study` must be a live handle; `out` valid for writing.
 */
enum ShiftlabStatus shiftlab_study_gap(const struct ShiftlabStudy *study,
                                       int32_t which,
                                       struct ShiftlabGap *out);

/**
 * # Safety
 * `study` must be a live handle; `out` valid for writing.
 */
enum ShiftlabStatus shiftlab_study_concordance(const struct ShiftlabStudy *study,
                                               struct ShiftlabConcordance *out);

/**
 * Number of swap rows, sorted by AUROC difference, largest first.
 *
 * # Safety
 * `study` must be a live handle; `out` valid for writing.
 */
enum ShiftlabStatus shiftlab_study_swap_len(const struct ShiftlabStudy *study, size_t *out);

/**
 * # Safety
 * `study` must be a live handle; `out` valid for writing.
 */
enum ShiftlabStatus shiftlab_study_swap_row(const struct ShiftlabStudy *study,
                                            size_t index,
                                            struct ShiftlabSwapRow *out);

/**
 * All study reports as one JSON document. Free with
 * [`shiftlab_string_free`].
 *
 * # Safety
 * `study` must be a live handle; `out` valid for one pointer.
 */
enum ShiftlabStatus shiftlab_study_report_json(const struct ShiftlabStudy *study, char **out);

/**
 * # Safety
 * `study` must be NULL or a handle not yet freed.
 */
void shiftlab_study_free(struct ShiftlabStudy *study);

/**
 * AUROC or Brier score of `n` scores with 0/1 labels; `which` is a
 * [`ShiftlabMeasure`] value.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements.
 */
enum ShiftlabStatus shiftlab_metric(int32_t which,
                                    const double *scores,
                                    const uint8_t *labels,
                                    size_t n,
                                    double *out);

/**
 * Percentile bootstrap interval with encounter-level resampling.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements.
 */
enum ShiftlabStatus shiftlab_bootstrap_ci(int32_t which,
                                          const double *scores,
                                          const uint8_t *labels,
                                          size_t n,
                                          size_t n_replicates,
                                          uint64_t seed,
                                          struct ShiftlabInterval *out);

/**
 * Gap decomposition of three point estimates; `negate` for measures where
 * lower is better.
 *
 * # Safety
 * `out` must be valid for writing.
 */
enum ShiftlabStatus shiftlab_performance_gap(double p_ret,
                                             double p_ret_prime,
                                             double p_pro,
                                             bool negate,
                                             struct ShiftlabGapValues *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHIFTLAB_H */
