#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "st3/models.hpp"
#include "st3/sparsify.hpp"

namespace st3 {

// Layer name -> zero mask (1 = weight is exactly zero in the forward path).
using MaskMap = std::map<std::string, std::vector<uint8_t>>;

struct LayerFlops {
  std::string layer;
  int64_t nnz = 0;
  int64_t total = 0;
  int64_t mac_dense = 0;
  double mac_sparse = 0.0;
};

// FLOPS counts a multiply-add as 2 FLOPS; non-prunable ops (bn, relu,
// pooling, residual adds) are counted dense on both sides.
struct FlopsEstimate {
  double dense_flops = 0.0;
  double sparse_flops = 0.0;
  std::vector<LayerFlops> layers;
};

FlopsEstimate flops_from_params(const std::vector<PrunableParam>& params,
                                int64_t extra_flops, const MaskMap& masks);
FlopsEstimate flops_estimate(const Model& model, const MaskMap& masks);

// One row per training epoch.
struct RunRecord {
  int64_t epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double target_sparsity = 0, achieved_sparsity = 0;
  double sparse_flops = 0, dense_flops = 0;
  double lr = 0;
  double wall_time_s = 0;
};

// Counts zero/nonzero state flips of every prunable weight between
// consecutive per-epoch observations, bucketed into epoch groups.
class SwitchTracker {
 public:
  SwitchTracker(const std::vector<std::pair<std::string, int64_t>>& layers,
                int64_t total_epochs, int n_groups);

  void record(const MaskMap& masks, int64_t epoch);

  int n_groups() const { return n_groups_; }
  int group_of(int64_t epoch) const;
  int64_t total_switches(int group) const;
  int64_t observations() const { return observations_; }

  struct HistRow {
    int group = 0;
    bool final_active = false;
    int64_t switch_count = 0;
    int64_t n_weights = 0;
  };
  // Bins per-group switch counts >= 2, split by the weight's final state.
  std::vector<HistRow> switch_histogram() const;

 private:
  struct Slot {
    std::string name;
    int64_t offset;
    int64_t size;
  };
  std::vector<Slot> slots_;
  int64_t total_weights_ = 0;
  int n_groups_;
  int64_t group_len_;
  std::vector<uint8_t> prev_zero_;
  std::vector<uint8_t> final_zero_;
  std::vector<uint16_t> counts_;  // n_groups x total_weights
  bool has_prev_ = false;
  int64_t observations_ = 0;
};

// --- CSV schemas (header row mandatory) ---------------------------------
// runrecord.csv: one row per epoch; flops_per_mac column pins the 2
// FLOPS-per-MAC convention in the output itself.
void write_runrecords(const std::string& path,
                      const std::vector<RunRecord>& records);
std::vector<RunRecord> read_runrecords(const std::string& path);

struct LayerRow {
  int64_t epoch = 0;
  std::string layer;
  int64_t nnz = 0, total = 0;
  double sparsity = 0;
  int64_t mac_dense = 0;
  double mac_sparse = 0;
};
void write_layer_rows(const std::string& path, const std::vector<LayerRow>& rows);
std::vector<LayerRow> read_layer_rows(const std::string& path);

void write_switch_rows(const std::string& path,
                       const std::vector<SwitchTracker::HistRow>& rows);
std::vector<SwitchTracker::HistRow> read_switch_rows(const std::string& path);

}  // namespace st3
