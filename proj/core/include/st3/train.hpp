#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "st3/data.hpp"
#include "st3/metrics.hpp"
#include "st3/models.hpp"
#include "st3/schedule.hpp"
#include "st3/sparsify.hpp"

namespace st3 {

enum class Method { kDense, kSt3, kGmp };
const char* method_name(Method m);

struct LrScheduleConfig {
  enum class Kind { kStep, kCosine };
  Kind kind = Kind::kStep;
  std::vector<int64_t> milestones = {80, 120};
  double gamma = 0.1;
  int64_t warmup_epochs = 0;

  double lr_at(double base_lr, double epoch_f, int64_t total_epochs) const;
};

struct TrainConfig {
  int64_t epochs = 20;
  int64_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip_norm = 3.0;
  LrScheduleConfig lr_schedule;
  uint64_t seed = 1;
  Method method = Method::kSt3;
  SparsifyConfig sparsify;

  ScheduleKind schedule_kind = ScheduleKind::kCubic;
  double s_final = 0.9;
  int64_t sparsity_start_epoch = 5;  // cubic ramp, in epochs
  int64_t sparsity_end_epoch = 80;

  int switch_groups = 4;
  bool reset_momentum_on_cycle = true;
  bool reset_aug_seed_on_cycle = false;

  void validate() const;
};

struct OptimizerState {
  std::vector<std::vector<float>> momentum;  // parallels Model::trainable()
  int64_t step = 0;
  double lr = 0.0;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
  int64_t correct = 0;     // training-batch hits at the sparse weights
};

// Permanent pruning state for the GMP baseline. Masks only grow; masked
// raw weights and their momentum stay exactly zero.
struct GmpState {
  MaskMap mask;
  int64_t masked = 0;
};

// Grows the mask so that floor(sp_ratio * N) weights are zero, picking the
// smallest-magnitude unmasked weights globally, then zeroes those raw
// weights and their momentum slots.
void gmp_step(std::vector<PrunableParam>& params, GmpState& state,
              double sp_ratio, OptimizerState* opt);

// One model + one config; drives individual steps so that higher-level
// runs (single cycle, sweeps, LRR) share the same update rule.
class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg, int64_t steps_per_epoch);

  // Derive sparse weights, forward, backward, clip, SGD-momentum update
  // on the raw weights.
  StepResult train_step(const Batch& batch, double sp_ratio);

  struct EvalResult {
    double loss = 0.0;
    double acc = 0.0;
  };
  EvalResult evaluate(const Dataset& data, int split, double sp_ratio);

  // Zero masks of the forward-path weights at the given target.
  MaskMap current_masks(double sp_ratio);
  WeightMap eval_weights(double sp_ratio);

  int64_t global_step() const { return opt_.step; }
  double epoch_in_cycle() const;
  double current_lr() const;
  // Rewinds the lr schedule (and optionally momentum) at a cycle start.
  void start_cycle();
  // LRR switches between dense and the sparse inner method per cycle.
  void set_method(Method m);
  Method method() const { return cfg_.method; }

  OptimizerState& optimizer() { return opt_; }
  GmpState& gmp() { return gmp_; }
  Model& model() { return model_; }

 private:
  void apply_sgd(double clip_scale);

  Model& model_;
  TrainConfig cfg_;
  int64_t steps_per_epoch_;
  int64_t cycle_base_step_ = 0;
  OptimizerState opt_;
  GmpState gmp_;
};

struct RunOptions {
  std::string out_dir;      // empty = keep everything in memory
  std::string config_text;  // stored verbatim in checkpoints
};

struct RunResult {
  std::vector<RunRecord> records;
  double best_val_acc = 0.0;
  double final_val_acc = 0.0;
  double final_test_acc = 0.0;
  double achieved_sparsity = 0.0;
  double sparse_flops = 0.0, dense_flops = 0.0;
  std::vector<int64_t> switch_totals;  // per epoch group
  std::vector<SwitchTracker::HistRow> switch_hist;
  std::vector<LayerRow> layer_rows;
  std::vector<double> cycle_targets;  // LRR only
};

RunResult train_run(Model& model, const TrainConfig& cfg, const Dataset& data,
                    const RunOptions& options = {});

enum class LrrInner { kHardPrune, kSt3 };

// Multi-cycle driver: one dense cycle, then `cycles` cycles whose target
// sparsity follows 1-(1-p)^c. The lr schedule rewinds at every cycle
// start; weights carry over.
RunResult lrr_run(Model& model, const TrainConfig& cfg, const Dataset& data,
                  int64_t cycles, double prune_fraction, LrrInner inner,
                  const RunOptions& options = {});

}  // namespace st3
