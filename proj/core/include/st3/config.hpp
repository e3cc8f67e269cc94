#pragma once

#include <memory>
#include <string>
#include <vector>

#include "st3/data.hpp"
#include "st3/models.hpp"
#include "st3/train.hpp"

namespace st3 {

struct DatasetSpec {
  std::string kind = "synth_gaussians";  // synth_gaussians|synth_teacher|mnist|cifar10
  int64_t classes = 10;
  int64_t dim = 16;
  int64_t n_per_class = 500;
  double separation = 3.0;
  double noise = 1.0;
  int64_t n = 12000;            // synth_teacher total
  int64_t teacher_hidden = 64;  // synth_teacher
  uint64_t data_seed = 7;
  std::string root;  // mnist/cifar root; CLI --dataset-root / ST3_DATA_ROOT win
  int64_t subset_train = 10000;
  bool full = false;
};

struct ModelSpec {
  std::string arch = "mlp";  // mlp|lenet|mini_resnet
  std::vector<int64_t> hidden = {64, 32};
  int depth = 8;
  int width = 8;
};

struct LrrSpec {
  int64_t cycles = 2;
  double prune_fraction = 0.5;
  std::string inner = "st3";  // st3|hard_prune
};

// The whole experiment as one declarative document. Parsing is strict:
// unknown keys are rejected with their full path; parse -> serialize ->
// parse is the identity.
struct ExperimentConfig {
  std::string name = "experiment";
  std::string out_dir = "runs/out";
  std::vector<uint64_t> seeds = {1, 2, 3};
  DatasetSpec dataset;
  ModelSpec model;
  TrainConfig train;
  LrrSpec lrr;

  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);
std::string config_to_text(const ExperimentConfig& cfg);

std::unique_ptr<Model> build_model(const ModelSpec& spec, int64_t in_dim,
                                   int64_t classes, uint64_t seed);
Dataset build_dataset(const DatasetSpec& spec, const std::string& root_override);

Method parse_method(const std::string& s);
ThresholdMode parse_threshold_mode(const std::string& s);
Allocation parse_allocation(const std::string& s);
ScheduleKind parse_schedule_kind(const std::string& s);

}  // namespace st3
