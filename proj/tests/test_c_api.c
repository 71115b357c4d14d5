/* Copyright 2026 The soilseg Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Exercises libsoilseg through its C header only, compiled as C. */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "soilseg/soilseg.h"

static int failures = 0;

#define EXPECT(cond)                                                \
  do {                                                              \
    if (!(cond)) {                                                  \
      fprintf(stderr, "%s:%d: expectation failed: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                   \
    }                                                               \
  } while (0)

static void count_lines(const char* line, void* user_data) {
  (void)line;
  ++*(int*)user_data;
}

int main(int argc, char** argv) {
  const char* scratch = argc > 1 ? argv[1] : "c_api_scratch";
  char root[1024];
  snprintf(root, sizeof(root), "%s/ds", scratch);

  EXPECT(strlen(soilseg_version()) > 0);
  EXPECT(strcmp(soilseg_status_name(SOILSEG_MISSING_FILE), "MissingFile") == 0);
  EXPECT(soilseg_exit_code(SOILSEG_OK) == 0);
  EXPECT(soilseg_exit_code(SOILSEG_INVALID_ARGUMENT) == 64);
  EXPECT(soilseg_exit_code(SOILSEG_MISSING_FILE) == 2);
  EXPECT(soilseg_exit_code(SOILSEG_VALIDATION_FAILED) == 1);

  /* Learning-rate schedule with defaults and with an override. */
  double lr = 0.0;
  EXPECT(soilseg_lr_at_epoch(NULL, 0, &lr) == SOILSEG_OK && lr == 0.004);
  EXPECT(soilseg_lr_at_epoch("{}", 15, &lr) == SOILSEG_OK && lr == 0.004 * 0.1);
  EXPECT(soilseg_lr_at_epoch("{\"epochs\": 15, \"decay_epochs\": [6, 12]}", 12, &lr) == SOILSEG_OK &&
         lr == 0.004 * 0.1 * 0.1);
  EXPECT(soilseg_lr_at_epoch(NULL, 25, &lr) == SOILSEG_EPOCH_OUT_OF_RANGE);
  EXPECT(strlen(soilseg_last_error()) > 0);
  EXPECT(soilseg_lr_at_epoch("{not json", 0, &lr) == SOILSEG_INVALID_ARGUMENT);

  int obj = 0, reg = 0;
  EXPECT(soilseg_rpn_head_channels(9, &obj, &reg) == SOILSEG_OK && obj == 18 && reg == 36);
  EXPECT(soilseg_rpn_head_channels(0, &obj, &reg) == SOILSEG_INVALID_K);

  /* 7:3 split of 111 ids. */
  int64_t ids[111], train[111], val[111];
  size_t n_train = 0, n_val = 0;
  for (int i = 0; i < 111; ++i) ids[i] = i + 1;
  EXPECT(soilseg_split_ids(ids, 111, 0.7, 0, train, &n_train, val, &n_val) == SOILSEG_OK);
  EXPECT(n_train == 78 && n_val == 33);

  /* Synthetic dataset, loaded and validated through handles. */
  EXPECT(soilseg_generate_synthetic(root, 5, 64, 7, -1) == SOILSEG_OK);
  soilseg_dataset* ds = NULL;
  EXPECT(soilseg_dataset_load(root, "train", &ds) == SOILSEG_OK);
  size_t images = 0, annotations = 0, violations = 99;
  EXPECT(soilseg_dataset_counts(ds, &images, &annotations) == SOILSEG_OK && images == 5 && annotations == 5);
  char* report = NULL;
  EXPECT(soilseg_dataset_validate(ds, &violations, &report) == SOILSEG_OK && violations == 0);
  EXPECT(report != NULL && strcmp(report, "[]") == 0);
  soilseg_free_string(report);
  soilseg_dataset_free(ds);
  soilseg_dataset_free(NULL);
  EXPECT(soilseg_dataset_load(root, "test", &ds) == SOILSEG_INVALID_ARGUMENT && ds == NULL);

  /* Subcommands with a progress callback. */
  char options[1200];
  snprintf(options, sizeof(options), "{\"root\": \"%s\"}", root);
  int lines = 0;
  char* result = NULL;
  EXPECT(soilseg_run_command("validate", options, count_lines, &lines, &result) == SOILSEG_OK);
  EXPECT(lines >= 1);
  EXPECT(result != NULL && strstr(result, "\"exit_code\":0") != NULL);
  soilseg_free_string(result);
  EXPECT(soilseg_run_command("validate", "{\"root\": \"/nonexistent/soilseg\"}", NULL, NULL, NULL) ==
         SOILSEG_MISSING_FILE);
  EXPECT(soilseg_run_command("frobnicate", "{}", NULL, NULL, NULL) == SOILSEG_INVALID_ARGUMENT);
  EXPECT(soilseg_run_command(NULL, "{}", NULL, NULL, NULL) == SOILSEG_INVALID_ARGUMENT);

  /* Model handles. */
  soilseg_model* model = NULL;
  EXPECT(soilseg_model_load("/nonexistent/model.bin", "cpu", &model) == SOILSEG_MISSING_FILE && model == NULL);
  soilseg_model_free(NULL);

  if (failures == 0) printf("C API: all expectations met\n");
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
