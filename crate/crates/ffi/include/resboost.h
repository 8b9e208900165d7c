#ifndef RESBOOST_H
#define RESBOOST_H

/* Generated by cbindgen from the resboost-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Split selector for [`rb_evaluate_csv`].
typedef enum RbSplit {
  RB_SPLIT_TRAIN = 0,
  RB_SPLIT_TEST = 1,
  RB_SPLIT_ALL = 2,
} RbSplit;

// Status code returned by every fallible function.
typedef enum RbStatus {
  RB_STATUS_OK = 0,
  // A required pointer argument was null.
  RB_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  RB_STATUS_INVALID_UTF8 = 2,
  // File could not be read or written.
  RB_STATUS_IO = 3,
  // A document (checkpoint, tree spec, config) failed to parse.
  RB_STATUS_PARSE = 4,
  // Buffer or feature-width mismatch.
  RB_STATUS_SHAPE = 5,
  // Any other runtime failure; see `rb_last_error`.
  RB_STATUS_RUNTIME = 6,
  // The library caught a panic at the boundary.
  RB_STATUS_PANIC = 7,
} RbStatus;

// Opaque model handle: a boosted residual network plus the preprocessing
// context it was trained with.
typedef struct RbModel RbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the message of the most recent failure on this thread into
// `buffer` (truncated, always NUL-terminated when `capacity > 0`) and
// returns the full message length in bytes.
size_t rb_last_error(char *buffer, size_t capacity);

// Loads a checkpoint written by the library or CLI.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
// On success `*out` owns a model that must be released with
// [`rb_model_free`].
enum RbStatus rb_model_load(const char *path, struct RbModel **out);

// Writes the model as a checkpoint.
//
// # Safety
// `model` must come from this library; `path` must be NUL-terminated.
enum RbStatus rb_model_save(const struct RbModel *model, const char *path);

// Releases a model handle. Null is a no-op.
//
// # Safety
// `model` must have been returned by this library and not freed before.
void rb_model_free(struct RbModel *model);

// Number of input features the model expects; 0 for null.
//
// # Safety
// `model` must be a live handle from this library or null.
size_t rb_model_input_width(const struct RbModel *model);

// Number of classes the model predicts; 0 for null.
//
// # Safety
// `model` must be a live handle from this library or null.
size_t rb_model_class_count(const struct RbModel *model);

// Number of residual modules; 0 for null.
//
// # Safety
// `model` must be a live handle from this library or null.
size_t rb_model_module_count(const struct RbModel *model);

// Predicts one raw (unnormalized) feature row. The stored preprocessing
// is applied when present. `probabilities` may be null; otherwise it
// receives `rb_model_class_count` entries. `class_out` may be null.
//
// # Safety
// `features` must point to `features_len` doubles; `probabilities`, when
// non-null, to at least `rb_model_class_count(model)` doubles.
enum RbStatus rb_model_predict(const struct RbModel *model,
                               const double *features,
                               size_t features_len,
                               double *probabilities,
                               size_t *class_out);

// Trains a model from a JSON configuration document, e.g.
// `{"data": "glass.csv", "trees": 15, "depth": 5, "mode": "shrinkage"}`.
// Unset fields take the CLI defaults.
//
// # Safety
// `config_json` must be NUL-terminated; `out` must be valid. On success
// `*out` owns a model.
enum RbStatus rb_train_csv(const char *config_json, struct RbModel **out);

// Evaluates the model on a CSV file using the checkpoint's stored
// normalization, label encoding, and split seed. Writes accuracy to
// `accuracy_out`.
//
// # Safety
// `model` must be a live handle; `path` NUL-terminated; `accuracy_out`
// valid.
enum RbStatus rb_evaluate_csv(const struct RbModel *model,
                              const char *path,
                              enum RbSplit split,
                              double *accuracy_out);

// Converts a classical tree document (JSON: `{n_features, nodes,
// leaves}`) into a single-module model.
//
// # Safety
// `spec_json` must be NUL-terminated; `out` must be valid. On success
// `*out` owns a model.
enum RbStatus rb_convert_tree_json(const char *spec_json, struct RbModel **out);

// Runs the property-check suite and returns the JSON report as a newly
// allocated string (free with [`rb_string_free`]). Returns `Ok` when
// every check passed, `Runtime` otherwise (the report is still written).
//
// # Safety
// `json_out` must be a valid pointer.
enum RbStatus rb_run_checks(uint64_t seed, char **json_out);

// Frees a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must have been returned by this library and not freed before.
void rb_string_free(char *s);

// ABI version of this header/library pair.
int rb_abi_version(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* RESBOOST_H */
