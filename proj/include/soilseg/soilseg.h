/* Copyright 2026 The soilseg Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Stable C interface of libsoilseg.
 *
 * Every function returns a status (SOILSEG_OK on success). On failure the
 * calling thread's soilseg_last_error() describes the problem. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with soilseg_free_string(). Handles are opaque and released with
 * their matching *_free function; passing NULL to a *_free function is a
 * no-op.
 */
#ifndef SOILSEG_SOILSEG_H_
#define SOILSEG_SOILSEG_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SOILSEG_API __declspec(dllexport)
#else
#define SOILSEG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values are stable; new codes are only appended. */
typedef enum soilseg_status {
  SOILSEG_OK = 0,
  SOILSEG_INVALID_ARGUMENT = 1,
  SOILSEG_MISSING_FILE = 2,
  SOILSEG_SCHEMA_ERROR = 3,
  SOILSEG_DANGLING_REFERENCE = 4,
  SOILSEG_EMPTY_INPUT = 5,
  SOILSEG_DEGENERATE_POLYGON = 6,
  SOILSEG_IO_ERROR = 7,
  SOILSEG_CONFIG_ERROR = 8,
  SOILSEG_WEIGHTS_UNAVAILABLE = 9,
  SOILSEG_INVALID_K = 10,
  SOILSEG_DEGENERATE_BOX = 11,
  SOILSEG_NON_FINITE_LOSS = 12,
  SOILSEG_SHAPE_MISMATCH = 13,
  SOILSEG_EPOCH_OUT_OF_RANGE = 14,
  SOILSEG_DATA_ERROR = 15,
  SOILSEG_CORRUPT_CHECKPOINT = 16,
  SOILSEG_VERSION_MISMATCH = 17,
  SOILSEG_NO_SOIL_DETECTED = 18,
  SOILSEG_EMPTY_INTERSECTION = 19,
  SOILSEG_VALIDATION_FAILED = 20,
  SOILSEG_INTERNAL = 99
} soilseg_status;

typedef struct soilseg_dataset soilseg_dataset;
typedef struct soilseg_model soilseg_model;

/* Receives each output line of a running command. */
typedef void (*soilseg_progress_fn)(const char* line, void* user_data);

SOILSEG_API const char* soilseg_version(void);
SOILSEG_API const char* soilseg_status_name(int status);
/* Message of the last failure on this thread; "" when none. */
SOILSEG_API const char* soilseg_last_error(void);
/* Process exit code for a status: 0 ok, 1 processing failure, 2 IO or
 * environment failure, 64 usage error. */
SOILSEG_API int soilseg_exit_code(int status);
SOILSEG_API void soilseg_free_string(char* s);

/* Runs a subcommand ("validate", "split", "synth", "train", "eval",
 * "segment", "bench", "plot") with a JSON options object. *result_json (may
 * be NULL) receives a JSON object with "stdout"/"stderr" line arrays, the
 * command's results and, on failure, "error". */
SOILSEG_API int soilseg_run_command(const char* name, const char* options_json, soilseg_progress_fn progress,
                                    void* user_data, char** result_json);

/* Datasets (COCO2017 layout under root; split is "train" or "val"). */
SOILSEG_API int soilseg_dataset_load(const char* root, const char* split, soilseg_dataset** out);
SOILSEG_API int soilseg_dataset_counts(const soilseg_dataset* ds, size_t* images, size_t* annotations);
/* *violations receives the number of invariant violations; report_json (may be
 * NULL) receives them as a JSON array. */
SOILSEG_API int soilseg_dataset_validate(const soilseg_dataset* ds, size_t* violations, char** report_json);
SOILSEG_API void soilseg_dataset_free(soilseg_dataset* ds);

/* Writes a synthetic dataset; n_val < 0 selects the default 7:3 proportion. */
SOILSEG_API int soilseg_generate_synthetic(const char* out_root, int n_images, int image_size, uint64_t seed,
                                           int n_val);

/* Random partition of ids; train_out and val_out must each hold n entries. */
SOILSEG_API int soilseg_split_ids(const int64_t* ids, size_t n, double ratio, uint64_t seed, int64_t* train_out,
                                  size_t* n_train, int64_t* val_out, size_t* n_val);

/* Learning rate of a 0-based epoch under a JSON training config (NULL or "{}"
 * for the defaults). */
SOILSEG_API int soilseg_lr_at_epoch(const char* train_config_json, int epoch, double* lr);

SOILSEG_API int soilseg_rpn_head_channels(int k, int* objectness_channels, int* regression_channels);

/* Models restored from a training checkpoint. device may be NULL or "" to use
 * SOILSEG_DEVICE, then CUDA when available, else CPU. */
SOILSEG_API int soilseg_model_load(const char* checkpoint, const char* device, soilseg_model** out);
/* Detections as a JSON array of {box, score, label, mask_area}. */
SOILSEG_API int soilseg_model_predict(soilseg_model* model, const char* image_path, char** detections_json);
/* Full pipeline for one image; writes {stem}_composite.png, {stem}_crop.png and
 * {stem}_meta.json to out_dir and returns the metadata JSON. */
SOILSEG_API int soilseg_model_segment(soilseg_model* model, const char* image_path, const char* out_dir,
                                      const char* stem, char** meta_json);
SOILSEG_API void soilseg_model_free(soilseg_model* model);

#ifdef __cplusplus
}
#endif

#endif /* SOILSEG_SOILSEG_H_ */
