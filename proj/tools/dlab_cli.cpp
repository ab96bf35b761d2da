// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dlab/dlab.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int report(dlab_status s) {
  if (s != DLAB_OK) std::fprintf(stderr, "dlab: %s: %s\n", dlab_status_name(s), dlab_last_error());
  return dlab_exit_code(s);
}

int run(const std::string& command, const Options& opt) {
  dlab_config* cfg = nullptr;
  dlab_status s = dlab_config_load(opt.config.c_str(), &cfg);
  if (s == DLAB_OK && opt.seed) s = dlab_config_set_seed(cfg, *opt.seed);
  if (s == DLAB_OK && !opt.out.empty()) s = dlab_config_set_output_dir(cfg, opt.out.c_str());
  if (s == DLAB_OK) s = dlab_run_command(command.c_str(), cfg);
  dlab_config_free(cfg);
  return report(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distillation backdoor lab"};
  app.set_version_flag("--version", std::string(dlab_version()));
  app.require_subcommand(1);

  Options opt;
  std::string chosen;
  for (std::size_t i = 0; i < dlab_command_count(); ++i) {
    const std::string name = dlab_command_name(i);
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->add_option("--config", opt.config, "experiment config (JSON)")->required();
    sub->add_option("--seed", opt.seed, "base seed override");
    sub->add_option("--out", opt.out, "output directory override");
    sub->callback([&chosen, name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  return run(chosen, opt);
}
