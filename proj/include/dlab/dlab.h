/* Copyright 2026 The dlab Authors
 * SPDX-License-Identifier: Apache-2.0 */

#ifndef DLAB_DLAB_H_
#define DLAB_DLAB_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DLAB_API __declspec(dllexport)
#else
#define DLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dlab_status {
  DLAB_OK = 0,
  DLAB_ERR_INVALID_ARGUMENT = 1,
  DLAB_ERR_SHAPE = 2,
  DLAB_ERR_VALIDATION = 3,
  DLAB_ERR_DIVERGENCE = 4,
  DLAB_ERR_IO = 5,
  DLAB_ERR_NOT_FOUND = 6,
  DLAB_ERR_CHECKSUM = 7,
  DLAB_ERR_MAGIC = 8,
  DLAB_ERR_TRUNCATED = 9,
  DLAB_ERR_INTERNAL = 10
} dlab_status;

typedef struct dlab_config dlab_config;
typedef struct dlab_dataset dlab_dataset;
typedef struct dlab_network dlab_network;
typedef struct dlab_trigger dlab_trigger;

DLAB_API const char* dlab_version(void);
DLAB_API const char* dlab_status_name(dlab_status status);

/* Message of the last failed call on this thread; "" when none. */
DLAB_API const char* dlab_last_error(void);

/* Process exit code for a status: 0 ok, 3 divergence, 2 for argument,
 * shape, validation and artifact errors, 1 otherwise. */
DLAB_API int dlab_exit_code(dlab_status status);

/* Experiment configuration. */
DLAB_API dlab_status dlab_config_load(const char* path, dlab_config** out);
DLAB_API dlab_status dlab_config_parse(const char* json_text, dlab_config** out);
DLAB_API dlab_status dlab_config_set_seed(dlab_config* config, uint64_t seed);
DLAB_API dlab_status dlab_config_set_output_dir(dlab_config* config, const char* dir);
DLAB_API const char* dlab_config_output_dir(const dlab_config* config);
DLAB_API void dlab_config_free(dlab_config* config);

DLAB_API size_t dlab_command_count(void);
DLAB_API const char* dlab_command_name(size_t index);
/* Runs a pipeline stage ("train-benign", ..., "run") into the configured
 * output directory. */
DLAB_API dlab_status dlab_run_command(const char* name, const dlab_config* config);

/* Datasets. Pixels are [n, 1, H, W] in row-major order. */
DLAB_API dlab_status dlab_dataset_generate(size_t classes, size_t per_class, size_t height, size_t width,
                                           double noise_sigma, uint64_t seed, dlab_dataset** out);
DLAB_API dlab_status dlab_dataset_load(const char* path, dlab_dataset** out);
DLAB_API dlab_status dlab_dataset_save(const dlab_dataset* data, const char* path);
DLAB_API size_t dlab_dataset_size(const dlab_dataset* data);
DLAB_API size_t dlab_dataset_classes(const dlab_dataset* data);
DLAB_API void dlab_dataset_free(dlab_dataset* data);

/* Networks. `arch` is "teacher", "surrogate", "student" or a layer list. */
DLAB_API dlab_status dlab_network_init(const char* arch, size_t height, size_t width, size_t classes, uint64_t seed,
                                       dlab_network** out);
DLAB_API dlab_status dlab_network_load(const char* path, dlab_network** out);
DLAB_API dlab_status dlab_network_save(const dlab_network* net, const char* path);
DLAB_API size_t dlab_network_class_count(const dlab_network* net);
DLAB_API size_t dlab_network_param_count(const dlab_network* net);
/* out receives n * class_count logits. */
DLAB_API dlab_status dlab_network_logits(const dlab_network* net, const double* images, size_t n, double* out);
DLAB_API void dlab_network_free(dlab_network* net);

/* Triggers. */
DLAB_API dlab_status dlab_trigger_load(const char* path, dlab_trigger** out);
DLAB_API dlab_status dlab_trigger_white_patch(size_t height, size_t width, size_t size, size_t target,
                                              dlab_trigger** out);
DLAB_API size_t dlab_trigger_target(const dlab_trigger* trigger);
DLAB_API double dlab_trigger_linf(const dlab_trigger* trigger);
DLAB_API void dlab_trigger_free(dlab_trigger* trigger);

/* Clean accuracy and, when trigger is non-null, attack success rate over
 * non-target samples. asr may be null. */
DLAB_API dlab_status dlab_evaluate(const dlab_network* net, const dlab_dataset* data, const dlab_trigger* trigger,
                                   double* acc, double* asr);

/* One-sided MAD anomaly index of n >= 3 per-class mask norms. */
DLAB_API dlab_status dlab_nc_anomaly_index(const double* l1_norms, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif /* DLAB_DLAB_H_ */
