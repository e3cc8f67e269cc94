#include "st3/metrics.hpp"

#include <algorithm>

#include "st3/csv.hpp"

namespace st3 {

FlopsEstimate flops_from_params(const std::vector<PrunableParam>& params,
                                int64_t extra_flops, const MaskMap& masks) {
  FlopsEstimate est;
  for (const auto& p : params) {
    LayerFlops lf;
    lf.layer = p.layer_name;
    lf.total = p.raw.numel();
    lf.mac_dense = p.mac_dense;
    auto it = masks.find(p.layer_name);
    int64_t zeros = 0;
    if (it != masks.end()) {
      if (static_cast<int64_t>(it->second.size()) != lf.total)
        fail(ErrorKind::kShapeMismatch,
             "flops_estimate: mask size mismatch for " + p.layer_name);
      for (uint8_t z : it->second) zeros += z;
    }
    lf.nnz = lf.total - zeros;
    lf.mac_sparse = static_cast<double>(lf.mac_dense) *
                    static_cast<double>(lf.nnz) / static_cast<double>(lf.total);
    est.dense_flops += 2.0 * static_cast<double>(lf.mac_dense);
    est.sparse_flops += 2.0 * lf.mac_sparse;
    est.layers.push_back(std::move(lf));
  }
  est.dense_flops += static_cast<double>(extra_flops);
  est.sparse_flops += static_cast<double>(extra_flops);
  return est;
}

FlopsEstimate flops_estimate(const Model& model, const MaskMap& masks) {
  if (model.prunable().empty())
    fail(ErrorKind::kInvalidArgument, "flops_estimate: model has no registry");
  return flops_from_params(model.prunable(), model.extra_flops(), masks);
}

SwitchTracker::SwitchTracker(
    const std::vector<std::pair<std::string, int64_t>>& layers,
    int64_t total_epochs, int n_groups)
    : n_groups_(n_groups) {
  if (n_groups < 1 || total_epochs < 1)
    fail(ErrorKind::kInvalidArgument, "SwitchTracker: bad group spec");
  for (const auto& [name, size] : layers) {
    slots_.push_back({name, total_weights_, size});
    total_weights_ += size;
  }
  group_len_ = (total_epochs + n_groups - 1) / n_groups;
  prev_zero_.assign(static_cast<size_t>(total_weights_), 0);
  final_zero_.assign(static_cast<size_t>(total_weights_), 0);
  counts_.assign(static_cast<size_t>(total_weights_) * n_groups, 0);
}

int SwitchTracker::group_of(int64_t epoch) const {
  const int g = static_cast<int>(epoch / group_len_);
  return std::min(g, n_groups_ - 1);
}

void SwitchTracker::record(const MaskMap& masks, int64_t epoch) {
  const int g = group_of(epoch);
  for (const auto& slot : slots_) {
    auto it = masks.find(slot.name);
    if (it == masks.end())
      fail(ErrorKind::kInvalidArgument,
           "SwitchTracker: missing mask for " + slot.name);
    if (static_cast<int64_t>(it->second.size()) != slot.size)
      fail(ErrorKind::kShapeMismatch,
           "SwitchTracker: mask size mismatch for " + slot.name);
    const uint8_t* m = it->second.data();
    uint8_t* prev = prev_zero_.data() + slot.offset;
    uint8_t* fin = final_zero_.data() + slot.offset;
    uint16_t* cnt = counts_.data() + static_cast<size_t>(g) * total_weights_ +
                    slot.offset;
    for (int64_t i = 0; i < slot.size; ++i) {
      if (has_prev_ && m[i] != prev[i]) ++cnt[i];
      prev[i] = m[i];
      fin[i] = m[i];
    }
  }
  has_prev_ = true;
  ++observations_;
}

int64_t SwitchTracker::total_switches(int group) const {
  if (group < 0 || group >= n_groups_)
    fail(ErrorKind::kInvalidArgument, "SwitchTracker: bad group index");
  int64_t total = 0;
  const uint16_t* cnt =
      counts_.data() + static_cast<size_t>(group) * total_weights_;
  for (int64_t i = 0; i < total_weights_; ++i) total += cnt[i];
  return total;
}

std::vector<SwitchTracker::HistRow> SwitchTracker::switch_histogram() const {
  // hist[group][final_state][count] -> weights; counts < 2 are excluded
  // at this reporting stage, per-figure convention.
  std::vector<std::map<int64_t, int64_t>> active(static_cast<size_t>(n_groups_));
  std::vector<std::map<int64_t, int64_t>> zeroed(static_cast<size_t>(n_groups_));
  for (int g = 0; g < n_groups_; ++g) {
    const uint16_t* cnt =
        counts_.data() + static_cast<size_t>(g) * total_weights_;
    for (int64_t i = 0; i < total_weights_; ++i) {
      if (cnt[i] < 2) continue;
      auto& dst = final_zero_[static_cast<size_t>(i)] ? zeroed : active;
      ++dst[static_cast<size_t>(g)][cnt[i]];
    }
  }
  std::vector<HistRow> rows;
  for (int g = 0; g < n_groups_; ++g) {
    for (const auto& [count, n] : active[static_cast<size_t>(g)])
      rows.push_back({g, true, count, n});
    for (const auto& [count, n] : zeroed[static_cast<size_t>(g)])
      rows.push_back({g, false, count, n});
  }
  return rows;
}

// --- CSV schemas ---------------------------------------------------------

namespace {
const std::vector<std::string> kRunHeader = {
    "epoch",          "train_loss",       "train_acc",   "val_loss",
    "val_acc",        "target_sparsity",  "achieved_sparsity",
    "sparse_flops",   "dense_flops",      "lr",          "wall_time_s",
    "flops_per_mac"};
}

void write_runrecords(const std::string& path,
                      const std::vector<RunRecord>& records) {
  csv::Writer w(path, kRunHeader);
  for (const auto& r : records) {
    w.row({csv::fmt_int(r.epoch), csv::fmt_double(r.train_loss),
           csv::fmt_double(r.train_acc), csv::fmt_double(r.val_loss),
           csv::fmt_double(r.val_acc), csv::fmt_double(r.target_sparsity),
           csv::fmt_double(r.achieved_sparsity),
           csv::fmt_double(r.sparse_flops), csv::fmt_double(r.dense_flops),
           csv::fmt_double(r.lr), csv::fmt_double(r.wall_time_s), "2"});
  }
}

std::vector<RunRecord> read_runrecords(const std::string& path) {
  auto rows = csv::read_rows(path);
  if (rows.empty() || rows[0] != kRunHeader)
    fail(ErrorKind::kInvalidArgument, path + ": bad runrecord.csv header");
  std::vector<RunRecord> out;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != kRunHeader.size())
      fail(ErrorKind::kInvalidArgument, path + ": short runrecord row");
    RunRecord rec;
    rec.epoch = csv::parse_int(r[0]);
    rec.train_loss = csv::parse_double(r[1]);
    rec.train_acc = csv::parse_double(r[2]);
    rec.val_loss = csv::parse_double(r[3]);
    rec.val_acc = csv::parse_double(r[4]);
    rec.target_sparsity = csv::parse_double(r[5]);
    rec.achieved_sparsity = csv::parse_double(r[6]);
    rec.sparse_flops = csv::parse_double(r[7]);
    rec.dense_flops = csv::parse_double(r[8]);
    rec.lr = csv::parse_double(r[9]);
    rec.wall_time_s = csv::parse_double(r[10]);
    out.push_back(rec);
  }
  return out;
}

namespace {
const std::vector<std::string> kLayerHeader = {
    "epoch", "layer", "nnz", "total", "sparsity", "mac_dense", "mac_sparse"};
const std::vector<std::string> kSwitchHeader = {"group", "final_state",
                                                "switch_count", "n_weights"};
}

void write_layer_rows(const std::string& path, const std::vector<LayerRow>& rows) {
  csv::Writer w(path, kLayerHeader);
  for (const auto& r : rows) {
    w.row({csv::fmt_int(r.epoch), r.layer, csv::fmt_int(r.nnz),
           csv::fmt_int(r.total), csv::fmt_double(r.sparsity),
           csv::fmt_int(r.mac_dense), csv::fmt_double(r.mac_sparse)});
  }
}

std::vector<LayerRow> read_layer_rows(const std::string& path) {
  auto rows = csv::read_rows(path);
  if (rows.empty() || rows[0] != kLayerHeader)
    fail(ErrorKind::kInvalidArgument, path + ": bad layers.csv header");
  std::vector<LayerRow> out;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != kLayerHeader.size())
      fail(ErrorKind::kInvalidArgument, path + ": short layers row");
    LayerRow row;
    row.epoch = csv::parse_int(r[0]);
    row.layer = r[1];
    row.nnz = csv::parse_int(r[2]);
    row.total = csv::parse_int(r[3]);
    row.sparsity = csv::parse_double(r[4]);
    row.mac_dense = csv::parse_int(r[5]);
    row.mac_sparse = csv::parse_double(r[6]);
    out.push_back(row);
  }
  return out;
}

void write_switch_rows(const std::string& path,
                       const std::vector<SwitchTracker::HistRow>& rows) {
  csv::Writer w(path, kSwitchHeader);
  for (const auto& r : rows) {
    w.row({csv::fmt_int(r.group), r.final_active ? "active" : "zero",
           csv::fmt_int(r.switch_count), csv::fmt_int(r.n_weights)});
  }
}

std::vector<SwitchTracker::HistRow> read_switch_rows(const std::string& path) {
  auto rows = csv::read_rows(path);
  if (rows.empty() || rows[0] != kSwitchHeader)
    fail(ErrorKind::kInvalidArgument, path + ": bad switches.csv header");
  std::vector<SwitchTracker::HistRow> out;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != kSwitchHeader.size())
      fail(ErrorKind::kInvalidArgument, path + ": short switches row");
    SwitchTracker::HistRow row;
    row.group = static_cast<int>(csv::parse_int(r[0]));
    row.final_active = (r[1] == "active");
    row.switch_count = csv::parse_int(r[2]);
    row.n_weights = csv::parse_int(r[3]);
    out.push_back(row);
  }
  return out;
}

}  // namespace st3
