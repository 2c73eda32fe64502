#ifndef DIALACT_H
#define DIALACT_H

/* Generated by cbindgen from dialact-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the process exit classes of the CLI.
 */
typedef enum DialactStatus {
  DIALACT_STATUS_OK = 0,
  DIALACT_STATUS_USAGE_ERROR = 1,
  DIALACT_STATUS_DATA_ERROR = 2,
  DIALACT_STATUS_NUMERICAL_ERROR = 3,
  DIALACT_STATUS_NULL_POINTER = 4,
  DIALACT_STATUS_PANIC = 5,
} DialactStatus;

/**
 * Opaque handle to a loaded model checkpoint.
 */
typedef struct DialactModel DialactModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; do not free.
 */
const char *dialact_version(void);

/**
 * Message of the last error on this thread, or NULL if none.
 * The caller owns the returned string.
 */
char *dialact_last_error_message(void);

/**
 * Release a string returned by this library. NULL is a no-op.
 */
void dialact_string_free(char *s);

/**
 * Load a checkpoint file. On success writes a new handle to `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DialactStatus dialact_checkpoint_load(const char *path, struct DialactModel **out);

/**
 * Release a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must have come from `dialact_checkpoint_load` and not been freed.
 */
void dialact_model_free(struct DialactModel *model);

/**
 * Context size n of the model, or -1 on NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
int64_t dialact_model_context(const struct DialactModel *model);

/**
 * Number of labels, or -1 on NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
int64_t dialact_model_num_labels(const struct DialactModel *model);

/**
 * Name of label `index`, or NULL when out of range. Caller owns the string.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
char *dialact_model_label_name(const struct DialactModel *model, uint64_t index);

/**
 * Label one conversation. `utterances` is an array of `count` NUL-terminated
 * strings, one utterance each, oldest first; tokens are whitespace-split and
 * lowercased like the default ingestion path. Writes `count` label indices
 * to `out_labels`.
 *
 * # Safety
 * All pointers must be valid for `count` elements; strings NUL-terminated.
 */
enum DialactStatus dialact_model_predict(const struct DialactModel *model,
                                         const char *const *utterances,
                                         uint64_t count,
                                         uint64_t *out_labels);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DIALACT_H */
