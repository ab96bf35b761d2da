// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/dlab.h"

#include <new>
#include <string>

#include "dlab/detect.hpp"
#include "dlab/distill.hpp"
#include "dlab/pipeline.hpp"

struct dlab_config {
  dlab::ExperimentConfig cfg;
};
struct dlab_dataset {
  dlab::Dataset data;
};
struct dlab_network {
  dlab::Network net;
};
struct dlab_trigger {
  dlab::Trigger trigger;
};

namespace {

thread_local std::string g_last_error;

dlab_status to_status(dlab::ErrorCode code) {
  using dlab::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return DLAB_ERR_INVALID_ARGUMENT;
    case ErrorCode::kShape: return DLAB_ERR_SHAPE;
    case ErrorCode::kValidation: return DLAB_ERR_VALIDATION;
    case ErrorCode::kDivergence: return DLAB_ERR_DIVERGENCE;
    case ErrorCode::kIo: return DLAB_ERR_IO;
    case ErrorCode::kNotFound: return DLAB_ERR_NOT_FOUND;
    case ErrorCode::kChecksum: return DLAB_ERR_CHECKSUM;
    case ErrorCode::kMagic: return DLAB_ERR_MAGIC;
    case ErrorCode::kTruncated: return DLAB_ERR_TRUNCATED;
    case ErrorCode::kInternal: return DLAB_ERR_INTERNAL;
  }
  return DLAB_ERR_INTERNAL;
}

dlab_status set_error(dlab_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <class F>
dlab_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return DLAB_OK;
  } catch (const dlab::Error& e) {
    return set_error(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(DLAB_ERR_INTERNAL, "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(DLAB_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return set_error(DLAB_ERR_INTERNAL, e.what());
  }
}

dlab_status null_arg(const char* fn) { return set_error(DLAB_ERR_INVALID_ARGUMENT, std::string(fn) + ": null argument"); }

}  // namespace

extern "C" {

const char* dlab_version(void) { return "0.1.0"; }

const char* dlab_status_name(dlab_status status) {
  switch (status) {
    case DLAB_OK: return "ok";
    case DLAB_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DLAB_ERR_SHAPE: return "shape";
    case DLAB_ERR_VALIDATION: return "validation";
    case DLAB_ERR_DIVERGENCE: return "divergence";
    case DLAB_ERR_IO: return "io";
    case DLAB_ERR_NOT_FOUND: return "not_found";
    case DLAB_ERR_CHECKSUM: return "checksum";
    case DLAB_ERR_MAGIC: return "magic";
    case DLAB_ERR_TRUNCATED: return "truncated";
    case DLAB_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* dlab_last_error(void) { return g_last_error.c_str(); }

int dlab_exit_code(dlab_status status) {
  switch (status) {
    case DLAB_OK: return 0;
    case DLAB_ERR_DIVERGENCE: return 3;
    case DLAB_ERR_IO:
    case DLAB_ERR_INTERNAL: return 1;
    default: return 2;
  }
}

dlab_status dlab_config_load(const char* path, dlab_config** out) {
  if (!path || !out) return null_arg("dlab_config_load");
  return guarded([&] { *out = new dlab_config{dlab::load_config(path)}; });
}

dlab_status dlab_config_parse(const char* json_text, dlab_config** out) {
  if (!json_text || !out) return null_arg("dlab_config_parse");
  return guarded([&] { *out = new dlab_config{dlab::parse_config(json_text)}; });
}

dlab_status dlab_config_set_seed(dlab_config* config, uint64_t seed) {
  if (!config) return null_arg("dlab_config_set_seed");
  return guarded([&] { config->cfg.apply_seed(seed); });
}

dlab_status dlab_config_set_output_dir(dlab_config* config, const char* dir) {
  if (!config || !dir) return null_arg("dlab_config_set_output_dir");
  if (!*dir) return set_error(DLAB_ERR_INVALID_ARGUMENT, "dlab_config_set_output_dir: empty path");
  return guarded([&] { config->cfg.output_dir = dir; });
}

const char* dlab_config_output_dir(const dlab_config* config) {
  return config ? config->cfg.output_dir.c_str() : "";
}

void dlab_config_free(dlab_config* config) { delete config; }

size_t dlab_command_count(void) { return dlab::command_names().size(); }

const char* dlab_command_name(size_t index) {
  const auto& names = dlab::command_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

dlab_status dlab_run_command(const char* name, const dlab_config* config) {
  if (!name || !config) return null_arg("dlab_run_command");
  return guarded([&] { dlab::run_command(name, config->cfg, config->cfg.output_dir); });
}

dlab_status dlab_dataset_generate(size_t classes, size_t per_class, size_t height, size_t width, double noise_sigma,
                                  uint64_t seed, dlab_dataset** out) {
  if (!out) return null_arg("dlab_dataset_generate");
  return guarded(
      [&] { *out = new dlab_dataset{dlab::gen_synthetic(classes, per_class, height, width, noise_sigma, seed)}; });
}

dlab_status dlab_dataset_load(const char* path, dlab_dataset** out) {
  if (!path || !out) return null_arg("dlab_dataset_load");
  return guarded([&] { *out = new dlab_dataset{dlab::load_dataset_binary(path)}; });
}

dlab_status dlab_dataset_save(const dlab_dataset* data, const char* path) {
  if (!data || !path) return null_arg("dlab_dataset_save");
  return guarded([&] { dlab::save_dataset_binary(data->data, path); });
}

size_t dlab_dataset_size(const dlab_dataset* data) { return data ? data->data.size() : 0; }
size_t dlab_dataset_classes(const dlab_dataset* data) { return data ? data->data.classes() : 0; }
void dlab_dataset_free(dlab_dataset* data) { delete data; }

dlab_status dlab_network_init(const char* arch, size_t height, size_t width, size_t classes, uint64_t seed,
                              dlab_network** out) {
  if (!arch || !out) return null_arg("dlab_network_init");
  return guarded([&] {
    const auto a = dlab::parse_architecture(arch, {1, height, width}, classes);
    *out = new dlab_network{dlab::Network::init(a, seed)};
  });
}

dlab_status dlab_network_load(const char* path, dlab_network** out) {
  if (!path || !out) return null_arg("dlab_network_load");
  return guarded([&] { *out = new dlab_network{dlab::load_network(path)}; });
}

dlab_status dlab_network_save(const dlab_network* net, const char* path) {
  if (!net || !path) return null_arg("dlab_network_save");
  return guarded([&] { dlab::save_network(net->net, path); });
}

size_t dlab_network_class_count(const dlab_network* net) { return net ? net->net.class_count() : 0; }
size_t dlab_network_param_count(const dlab_network* net) { return net ? net->net.params().size() : 0; }

dlab_status dlab_network_logits(const dlab_network* net, const double* images, size_t n, double* out) {
  if (!net || !images || !out) return null_arg("dlab_network_logits");
  if (n == 0) return set_error(DLAB_ERR_INVALID_ARGUMENT, "dlab_network_logits: empty batch");
  return guarded([&] {
    dlab::Shape shape = net->net.architecture().input;
    std::size_t per = 1;
    for (std::size_t d : shape) per *= d;
    shape.insert(shape.begin(), n);
    const dlab::Tensor logits = net->net.logits(dlab::Tensor(shape, std::vector<double>(images, images + n * per)));
    std::copy(logits.data().begin(), logits.data().end(), out);
  });
}

void dlab_network_free(dlab_network* net) { delete net; }

dlab_status dlab_trigger_load(const char* path, dlab_trigger** out) {
  if (!path || !out) return null_arg("dlab_trigger_load");
  return guarded([&] { *out = new dlab_trigger{dlab::load_trigger(path)}; });
}

dlab_status dlab_trigger_white_patch(size_t height, size_t width, size_t size, size_t target, dlab_trigger** out) {
  if (!out) return null_arg("dlab_trigger_white_patch");
  return guarded([&] { *out = new dlab_trigger{dlab::Trigger::white_patch({1, height, width}, size, target)}; });
}

size_t dlab_trigger_target(const dlab_trigger* trigger) { return trigger ? trigger->trigger.target : 0; }
double dlab_trigger_linf(const dlab_trigger* trigger) { return trigger ? trigger->trigger.linf() : 0.0; }
void dlab_trigger_free(dlab_trigger* trigger) { delete trigger; }

dlab_status dlab_evaluate(const dlab_network* net, const dlab_dataset* data, const dlab_trigger* trigger, double* acc,
                          double* asr) {
  if (!net || !data || !acc) return null_arg("dlab_evaluate");
  return guarded([&] {
    *acc = dlab::accuracy(net->net, data->data);
    if (trigger && asr) *asr = dlab::attack_success_rate(net->net, data->data, trigger->trigger);
  });
}

dlab_status dlab_nc_anomaly_index(const double* l1_norms, size_t n, double* out) {
  if (!l1_norms || !out) return null_arg("dlab_nc_anomaly_index");
  return guarded([&] {
    const auto index = dlab::nc_anomaly_index(std::span<const double>(l1_norms, n));
    std::copy(index.begin(), index.end(), out);
  });
}

}  // extern "C"
