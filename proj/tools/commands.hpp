#pragma once

#include <map>
#include <string>
#include <vector>

#include "st3/config.hpp"

namespace st3::cli {

struct CommonArgs {
  std::string config;
  std::string out_dir;
  std::string dataset_root;
  bool full_dataset = false;
  int jobs = 1;
  std::vector<uint64_t> seeds;      // empty = config seeds
  std::vector<double> sparsities;   // empty = config schedule value
};

int cmd_train(const CommonArgs& args);
int cmd_sweep(const CommonArgs& args);
int cmd_ablate(const CommonArgs& args);

struct LrrArgs : CommonArgs {
  int64_t cycles = -1;           // -1 = config value
  double prune_fraction = -1.0;  // <0 = config value
  std::string inner;             // empty = config value
};
int cmd_lrr(const LrrArgs& args);

int cmd_report(const std::string& run_dir);

// Built-in experiment presets, keyed by name.
const std::map<std::string, std::string>& presets();
// `arg` is a preset name or a file path.
ExperimentConfig resolve_config(const std::string& arg);

}  // namespace st3::cli
