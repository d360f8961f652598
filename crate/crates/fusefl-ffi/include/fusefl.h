#ifndef FUSEFL_H
#define FUSEFL_H

/* Generated by cbindgen from the fusefl-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit-code convention (0 ok, 1 runtime,
 * 2 configuration) plus FFI-specific argument failures.
 */
typedef enum fusefl_status {
  FUSEFL_STATUS_OK = 0,
  FUSEFL_STATUS_RUNTIME_ERROR = 1,
  FUSEFL_STATUS_CONFIG_ERROR = 2,
  FUSEFL_STATUS_NULL_ARGUMENT = 3,
  FUSEFL_STATUS_INVALID_UTF8 = 4,
  FUSEFL_STATUS_BUFFER_TOO_SMALL = 5,
  FUSEFL_STATUS_PANIC = 6,
} fusefl_status;

/**
 * Opaque handle to a loaded model checkpoint.
 */
typedef struct fusefl_model fusefl_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string (do not free).
 */
const char *fusefl_version(void);

/**
 * The last error message raised on this thread, or NULL. The caller owns
 * the returned string and must free it with `fusefl_string_free`.
 */
char *fusefl_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a pointer previously returned by a fusefl function.
 */
void fusefl_string_free(char *s);

/**
 * Scaled hidden width: round(base / sqrt(clients)), at least 1. Returns 0
 * on invalid arguments.
 */
uint32_t fusefl_scale_width(uint32_t base_width, uint32_t clients);

/**
 * Total uplink communication bytes for an algorithm.
 *
 * # Safety
 * `algorithm` must be a valid NUL-terminated string; `out` must be a valid
 * pointer.
 */
enum fusefl_status fusefl_comm_cost(const char *algorithm,
                                    uint64_t model_bytes,
                                    uint64_t rounds,
                                    uint64_t clients,
                                    uint64_t *out);

/**
 * Bytes needed to store the deployable result of an algorithm.
 *
 * # Safety
 * Same contract as [`fusefl_comm_cost`].
 */
enum fusefl_status fusefl_storage_cost(const char *algorithm,
                                       uint64_t model_bytes,
                                       uint64_t rounds,
                                       uint64_t clients,
                                       uint64_t *out);

/**
 * Run an experiment from config text. Outputs (metrics.csv, summary.json,
 * checkpoints) are written into `output_dir` when non-NULL, else into the
 * config's `run.output_dir`. On success, `summary_json_out` (when non-NULL)
 * receives the summary JSON; free it with `fusefl_string_free`.
 *
 * # Safety
 * `config_text` must be a valid NUL-terminated string; `output_dir` NULL or
 * likewise; `summary_json_out` NULL or a valid pointer.
 */
enum fusefl_status fusefl_run_config(const char *config_text,
                                     const char *output_dir,
                                     char **summary_json_out);

/**
 * Load a checkpoint file into an opaque model handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` a valid pointer.
 */
enum fusefl_status fusefl_model_load(const char *path, struct fusefl_model **out);

/**
 * Release a model handle.
 *
 * # Safety
 * `model` must be NULL or a pointer from `fusefl_model_load`, not yet freed.
 */
void fusefl_model_free(struct fusefl_model *model);

/**
 * Exact scalar parameter count of the model.
 *
 * # Safety
 * `model` must be a live handle; `out` a valid pointer.
 */
enum fusefl_status fusefl_model_param_count(const struct fusefl_model *model, uint64_t *out);

/**
 * Number of stages (blocks) the model exposes.
 *
 * # Safety
 * Same contract as [`fusefl_model_param_count`].
 */
enum fusefl_status fusefl_model_num_stages(const struct fusefl_model *model, uint32_t *out);

/**
 * Per-sample input length (flattened) and class count.
 *
 * # Safety
 * Same contract as [`fusefl_model_param_count`]; out-pointers may be NULL
 * to skip.
 */
enum fusefl_status fusefl_model_io_dims(const struct fusefl_model *model,
                                        uint64_t *input_len_out,
                                        uint64_t *num_classes_out);

/**
 * Class logits for a batch of flattened inputs. `input_len` must be
 * `batch * input_len_per_sample`; `logits` receives `batch * num_classes`
 * values.
 *
 * # Safety
 * `model` must be a live handle; `input` must point to `input_len` doubles;
 * `logits` must point to `logits_len` writable doubles.
 */
enum fusefl_status fusefl_model_predict(const struct fusefl_model *model,
                                        const double *input,
                                        size_t input_len,
                                        size_t batch,
                                        double *logits,
                                        size_t logits_len);

/**
 * Accuracy of the model on an IDX image/label pair.
 *
 * # Safety
 * `model` must be a live handle; paths valid NUL-terminated strings; `out`
 * a valid pointer.
 */
enum fusefl_status fusefl_model_evaluate_idx(const struct fusefl_model *model,
                                             const char *images_path,
                                             const char *labels_path,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSEFL_H */
