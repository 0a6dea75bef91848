#ifndef ADPO_LAB_H
#define ADPO_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdpoStatus {
  ADPO_STATUS_OK = 0,
  ADPO_STATUS_NULL_POINTER = 1,
  ADPO_STATUS_INVALID_ARGUMENT = 2,
  ADPO_STATUS_CONFIG = 3,
  ADPO_STATUS_IO = 4,
  ADPO_STATUS_PARSE = 5,
  /**
   * The computation rejected its input (shapes, domains, empty data).
   */
  ADPO_STATUS_DOMAIN = 6,
  /**
   * The metric is undefined for this input, e.g. AUC with one class.
   */
  ADPO_STATUS_UNDEFINED = 7,
  ADPO_STATUS_INTERNAL = 8,
} AdpoStatus;

typedef enum AdpoPreset {
  ADPO_PRESET_TOY = 0,
  ADPO_PRESET_PAPER = 1,
} AdpoPreset;

/**
 * Parsed and validated configuration.
 */
typedef struct AdpoConfig AdpoConfig;

/**
 * Policy parameters.
 */
typedef struct AdpoPolicy AdpoPolicy;

/**
 * Headline numbers of an evaluation. Absent metrics are NaN.
 */
typedef struct AdpoEvalSummary {
  uint64_t num_queries;
  uint64_t n;
  double pass_at_1;
  double majority;
  double best_of_n;
  double accuracy;
  double auc;
  double ap;
} AdpoEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *adpo_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *adpo_version(void);

/**
 * Parses a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AdpoStatus adpo_config_from_toml(const char *toml,
                                      enum AdpoPreset preset,
                                      struct AdpoConfig **out);

/**
 * # Safety
 * `config` must come from [`adpo_config_from_toml`] or be null.
 */
void adpo_config_free(struct AdpoConfig *config);

/**
 * Canonical content hash of a configuration as a newly allocated string;
 * release it with [`adpo_string_free`].
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum AdpoStatus adpo_config_hash(const struct AdpoConfig *config, char **out);

/**
 * Trains a policy with the configuration's training settings.
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum AdpoStatus adpo_train(const struct AdpoConfig *config, struct AdpoPolicy **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AdpoStatus adpo_policy_load(const char *path, struct AdpoPolicy **out);

/**
 * # Safety
 * `policy` must be a live handle and `path` a NUL-terminated string.
 */
enum AdpoStatus adpo_policy_save(const struct AdpoPolicy *policy, const char *path);

/**
 * Number of scalar parameters.
 *
 * # Safety
 * `policy` must be a live handle and `out` writable.
 */
enum AdpoStatus adpo_policy_len(const struct AdpoPolicy *policy, size_t *out);

/**
 * # Safety
 * `policy` must come from this library or be null.
 */
void adpo_policy_free(struct AdpoPolicy *policy);

/**
 * Evaluates `policy` under the configuration's evaluation settings.
 * `verifier` may be null unless the protocol needs one.
 *
 * # Safety
 * Handles must be live (or null where allowed) and `out` writable.
 */
enum AdpoStatus adpo_evaluate(const struct AdpoConfig *config,
                              const struct AdpoPolicy *policy,
                              const struct AdpoPolicy *verifier,
                              struct AdpoEvalSummary *out);

/**
 * Full evaluation report as JSON; release it with [`adpo_string_free`].
 *
 * # Safety
 * Handles must be live (or null where allowed) and `out` writable.
 */
enum AdpoStatus adpo_evaluate_json(const struct AdpoConfig *config,
                                   const struct AdpoPolicy *policy,
                                   const struct AdpoPolicy *verifier,
                                   char **out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void adpo_string_free(char *s);

/**
 * Group-normalizes `len` rewards into `out` (which may alias `rewards`).
 *
 * # Safety
 * `rewards` and `out` must each point to `len` doubles.
 */
enum AdpoStatus adpo_group_normalize(const double *rewards, size_t len, double *out);

/**
 * Area under the ROC curve with tied scores counted as one half.
 * Nonzero labels are positives.
 *
 * # Safety
 * `scores` and `labels` must each point to `len` elements.
 */
enum AdpoStatus adpo_auc(const double *scores, const uint8_t *labels, size_t len, double *out);

/**
 * Average precision over descending scores.
 *
 * # Safety
 * `scores` and `labels` must each point to `len` elements.
 */
enum AdpoStatus adpo_average_precision(const double *scores,
                                       const uint8_t *labels,
                                       size_t len,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADPO_LAB_H */
