#include "st3/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "st3/checkpoint.hpp"

namespace st3 {

namespace fs = std::filesystem;

const char* method_name(Method m) {
  switch (m) {
    case Method::kDense: return "dense";
    case Method::kSt3: return "st3";
    case Method::kGmp: return "gmp";
  }
  return "unknown";
}

double LrScheduleConfig::lr_at(double base_lr, double epoch_f,
                               int64_t total_epochs) const {
  if (kind == Kind::kStep) {
    const int64_t e = static_cast<int64_t>(epoch_f);
    double lr = base_lr;
    for (int64_t m : milestones)
      if (e >= m) lr *= gamma;
    return lr;
  }
  // cosine with optional linear warmup
  const double warm = static_cast<double>(warmup_epochs);
  if (warm > 0.0 && epoch_f < warm) return base_lr * (epoch_f / warm);
  const double span = std::max(1e-9, static_cast<double>(total_epochs) - warm);
  const double u = std::clamp((epoch_f - warm) / span, 0.0, 1.0);
  return 0.5 * base_lr * (1.0 + std::cos(3.14159265358979323846 * u));
}

void TrainConfig::validate() const {
  if (lr <= 0.0) fail(ErrorKind::kConfig, "train: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    fail(ErrorKind::kConfig, "train: momentum must lie in [0, 1)");
  if (grad_clip_norm <= 0.0)
    fail(ErrorKind::kConfig, "train: grad_clip_norm must be > 0");
  if (weight_decay < 0.0)
    fail(ErrorKind::kConfig, "train: weight_decay must be >= 0");
  if (epochs < 1 || batch_size < 1)
    fail(ErrorKind::kConfig, "train: epochs and batch_size must be >= 1");
  if (switch_groups < 1)
    fail(ErrorKind::kConfig, "train: switch_groups must be >= 1");
  if (method != Method::kDense) {
    if (!(s_final >= 0.0 && s_final < 1.0))
      fail(ErrorKind::kConfig, "train: s_final must lie in [0, 1)");
    if (schedule_kind == ScheduleKind::kCubic) {
      if (sparsity_start_epoch >= sparsity_end_epoch)
        fail(ErrorKind::kConfig, "train: sparsity ramp start must precede end");
      if (sparsity_end_epoch > epochs)
        fail(ErrorKind::kConfig,
             "train: cubic ramp ends after the last epoch; s_final unreachable");
    }
  }
}

void gmp_step(std::vector<PrunableParam>& params, GmpState& state,
              double sp_ratio, OptimizerState* opt) {
  int64_t total = 0;
  for (const auto& p : params) total += p.raw.numel();
  if (state.mask.empty()) {
    for (const auto& p : params)
      state.mask.emplace(p.layer_name,
                         std::vector<uint8_t>(static_cast<size_t>(p.raw.numel()), 0));
    state.masked = 0;
  }
  const int64_t target = static_cast<int64_t>(
      std::floor(sp_ratio * static_cast<double>(total)));
  if (target <= state.masked) return;
  const int64_t need = target - state.masked;

  struct Cand {
    double mag;
    int32_t param;
    int64_t elem;
  };
  std::vector<Cand> cands;
  cands.reserve(static_cast<size_t>(total - state.masked));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& mask = state.mask.at(params[pi].layer_name);
    const std::vector<float>& w = params[pi].raw.data();
    for (size_t i = 0; i < w.size(); ++i)
      if (!mask[i])
        cands.push_back({std::fabs(static_cast<double>(w[i])),
                         static_cast<int32_t>(pi), static_cast<int64_t>(i)});
  }
  auto less = [](const Cand& a, const Cand& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    if (a.param != b.param) return a.param < b.param;
    return a.elem < b.elem;
  };
  std::nth_element(cands.begin(), cands.begin() + (need - 1), cands.end(), less);
  std::sort(cands.begin(), cands.begin() + need, less);
  for (int64_t i = 0; i < need; ++i) {
    const Cand& c = cands[static_cast<size_t>(i)];
    auto& mask = state.mask.at(params[static_cast<size_t>(c.param)].layer_name);
    mask[static_cast<size_t>(c.elem)] = 1;
    params[static_cast<size_t>(c.param)].raw.data()[static_cast<size_t>(c.elem)] = 0.0f;
    if (opt && static_cast<size_t>(c.param) < opt->momentum.size() &&
        !opt->momentum[static_cast<size_t>(c.param)].empty())
      opt->momentum[static_cast<size_t>(c.param)][static_cast<size_t>(c.elem)] = 0.0f;
  }
  state.masked = target;
}

namespace {

// Temporarily drops requires_grad so eval forwards record no tape nodes.
class EvalGuard {
 public:
  explicit EvalGuard(Model& model) : params_(model.trainable()) {
    for (auto& t : params_) t.set_requires_grad(false);
  }
  ~EvalGuard() {
    for (auto& t : params_) t.set_requires_grad(true);
  }

 private:
  std::vector<Tensor> params_;
};

}  // namespace

Trainer::Trainer(Model& model, const TrainConfig& cfg, int64_t steps_per_epoch)
    : model_(model), cfg_(cfg), steps_per_epoch_(steps_per_epoch) {
  if (steps_per_epoch_ < 1)
    fail(ErrorKind::kConfig, "trainer: needs at least one step per epoch");
  auto params = model_.trainable();
  opt_.momentum.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    opt_.momentum[i].assign(params[i].data().size(), 0.0f);
}

double Trainer::epoch_in_cycle() const {
  return static_cast<double>(opt_.step - cycle_base_step_) /
         static_cast<double>(steps_per_epoch_);
}

double Trainer::current_lr() const {
  return cfg_.lr_schedule.lr_at(cfg_.lr, epoch_in_cycle(), cfg_.epochs);
}

void Trainer::start_cycle() {
  cycle_base_step_ = opt_.step;
  if (cfg_.reset_momentum_on_cycle)
    for (auto& m : opt_.momentum) std::fill(m.begin(), m.end(), 0.0f);
}

void Trainer::set_method(Method m) { cfg_.method = m; }

StepResult Trainer::train_step(const Batch& batch, double sp_ratio) {
  Tape tape;
  auto params = model_.trainable();
  for (auto& t : params) {
    t.grad();      // ensure allocation
    t.zero_grad();
  }

  WeightMap ws;
  if (cfg_.method == Method::kSt3) {
    ws = make_sparse_weights(tape, model_.prunable(), sp_ratio, cfg_.sparsify);
  } else if (cfg_.method == Method::kGmp) {
    gmp_step(model_.prunable(), gmp_, sp_ratio, &opt_);
  }

  Tensor logits = model_.forward(tape, batch.x, ws, /*training=*/true);
  Tensor loss = softmax_cross_entropy(tape, logits, batch.labels);
  if (!std::isfinite(loss.item()))
    fail(ErrorKind::kNonFinite, "train_step: non-finite loss at step " +
                                    std::to_string(opt_.step));
  tape.backward(loss);

  if (cfg_.method == Method::kGmp) {
    for (auto& p : model_.prunable()) {
      const auto& mask = gmp_.mask.at(p.layer_name);
      auto& g = p.raw.grad();
      for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) g[i] = 0.0f;
    }
  }

  double sq = 0.0;
  for (auto& t : params)
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  const double grad_norm = std::sqrt(sq);
  const double clip_scale =
      grad_norm > cfg_.grad_clip_norm ? cfg_.grad_clip_norm / grad_norm : 1.0;

  apply_sgd(clip_scale);

  if (cfg_.method == Method::kGmp) {
    for (auto& p : model_.prunable()) {
      const auto& mask = gmp_.mask.at(p.layer_name);
      auto& w = p.raw.data();
      for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) w[i] = 0.0f;
    }
  }

  ++opt_.step;

  StepResult res;
  res.loss = loss.item();
  res.grad_norm = grad_norm;
  const auto preds = argmax_rows(logits);
  for (size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == batch.labels[i]) ++res.correct;
  return res;
}

void Trainer::apply_sgd(double clip_scale) {
  const float lr = static_cast<float>(current_lr());
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const float cs = static_cast<float>(clip_scale);
  opt_.lr = current_lr();
  auto params = model_.trainable();
  for (size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].data();
    const auto& g = params[i].grad();
    auto& v = opt_.momentum[i];
    for (size_t e = 0; e < w.size(); ++e) {
      const float gt = g[e] * cs + wd * w[e];
      v[e] = mu * v[e] + gt;
      w[e] -= lr * v[e];
    }
  }
}

WeightMap Trainer::eval_weights(double sp_ratio) {
  WeightMap ws;
  if (cfg_.method == Method::kSt3) {
    SparseSet set = compute_sparse_values(model_.prunable(), sp_ratio, cfg_.sparsify);
    for (auto& [name, layer] : set.layers) ws.emplace(name, layer.value);
  }
  return ws;  // gmp/dense forward on the raw weights
}

MaskMap Trainer::current_masks(double sp_ratio) {
  MaskMap masks;
  if (cfg_.method == Method::kSt3) {
    SparseSet set = compute_sparse_values(model_.prunable(), sp_ratio, cfg_.sparsify);
    for (auto& [name, layer] : set.layers) masks.emplace(name, zero_mask(layer.value));
  } else if (cfg_.method == Method::kGmp && !gmp_.mask.empty()) {
    masks = gmp_.mask;
  } else {
    for (const auto& p : model_.prunable())
      masks.emplace(p.layer_name, zero_mask(p.raw));
  }
  return masks;
}

Trainer::EvalResult Trainer::evaluate(const Dataset& data, int split,
                                      double sp_ratio) {
  WeightMap ws = eval_weights(sp_ratio);
  EvalGuard guard(model_);
  const int64_t n = data.split_size(split);
  const int64_t offset = data.split_offset(split);
  EvalResult res;
  if (n == 0) return res;
  double loss_sum = 0.0;
  int64_t correct = 0;
  Tape tape;
  for (int64_t at = 0; at < n; at += cfg_.batch_size) {
    const int64_t bs = std::min<int64_t>(cfg_.batch_size, n - at);
    std::vector<int64_t> idx(static_cast<size_t>(bs));
    std::iota(idx.begin(), idx.end(), offset + at);
    Batch batch = make_batch(data, idx, nullptr);
    Tensor logits = model_.forward(tape, batch.x, ws, /*training=*/false);
    Tensor loss = softmax_cross_entropy(tape, logits, batch.labels);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(bs);
    const auto preds = argmax_rows(logits);
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == batch.labels[i]) ++correct;
    tape.clear();
  }
  res.loss = loss_sum / static_cast<double>(n);
  res.acc = static_cast<double>(correct) / static_cast<double>(n);
  return res;
}

namespace {

struct EpochOutcome {
  RunRecord record;
  MaskMap masks;
};

EpochOutcome run_one_epoch(Trainer& trainer, const Dataset& data,
                           const TrainConfig& cfg,
                           const SparsitySchedule* schedule, double fixed_sp,
                           int64_t epoch_global, int64_t aug_epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  const int64_t spe = data.train_n / cfg.batch_size;
  auto order = epoch_indices(data.train_n, cfg.seed, aug_epoch, true);

  double loss_sum = 0.0;
  int64_t correct = 0, seen = 0;
  const double lr_first = trainer.current_lr();
  double sp_now = 0.0;
  for (int64_t b = 0; b < spe; ++b) {
    double sp = fixed_sp;
    if (schedule) sp = sparsity_at(*schedule, trainer.global_step());
    if (cfg.method == Method::kDense) sp = 0.0;
    sp_now = sp;
    std::span<const int64_t> slice(order.data() + b * cfg.batch_size,
                                   static_cast<size_t>(cfg.batch_size));
    Rng aug_rng = Rng::stream(cfg.seed, 211, static_cast<uint64_t>(aug_epoch),
                              static_cast<uint64_t>(b));
    Batch batch = make_batch(data, slice, &aug_rng);
    try {
      StepResult res = trainer.train_step(batch, sp);
      loss_sum += res.loss * static_cast<double>(cfg.batch_size);
      correct += res.correct;
      seen += cfg.batch_size;
    } catch (const Error& e) {
      fail(e.kind(), "epoch " + std::to_string(epoch_global) + " step " +
                         std::to_string(b) + ": " + e.what());
    }
  }

  // Evaluation and bookkeeping use the schedule value reached by now.
  if (schedule) sp_now = sparsity_at(*schedule, trainer.global_step());
  if (cfg.method == Method::kDense) sp_now = 0.0;

  EpochOutcome out;
  out.masks = trainer.current_masks(sp_now);
  Trainer::EvalResult val = trainer.evaluate(data, 1, sp_now);

  int64_t zeros = 0, total = 0;
  for (const auto& [name, mask] : out.masks) {
    total += static_cast<int64_t>(mask.size());
    for (uint8_t z : mask) zeros += z;
  }
  FlopsEstimate flops = flops_from_params(trainer.model().prunable(),
                                          trainer.model().extra_flops(), out.masks);

  RunRecord& r = out.record;
  r.epoch = epoch_global;
  r.train_loss = loss_sum / static_cast<double>(std::max<int64_t>(1, seen));
  r.train_acc = static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(1, seen));
  r.val_loss = val.loss;
  r.val_acc = val.acc;
  r.target_sparsity = sp_now;
  r.achieved_sparsity = static_cast<double>(zeros) / static_cast<double>(total);
  r.sparse_flops = flops.sparse_flops;
  r.dense_flops = flops.dense_flops;
  r.lr = lr_first;
  r.wall_time_s = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<LayerRow> layer_rows_for(const Model& model, const MaskMap& masks,
                                     int64_t epoch) {
  FlopsEstimate flops = flops_from_params(model.prunable(), model.extra_flops(), masks);
  std::vector<LayerRow> rows;
  for (const auto& lf : flops.layers) {
    LayerRow row;
    row.epoch = epoch;
    row.layer = lf.layer;
    row.nnz = lf.nnz;
    row.total = lf.total;
    row.sparsity = 1.0 - static_cast<double>(lf.nnz) / static_cast<double>(lf.total);
    row.mac_dense = lf.mac_dense;
    row.mac_sparse = lf.mac_sparse;
    rows.push_back(std::move(row));
  }
  return rows;
}

void save_model_checkpoint(const std::string& path, Model& model,
                           const std::string& config_text, double sp_ratio,
                           double achieved) {
  Checkpoint ckpt;
  ckpt.config_text = config_text;
  ckpt.sp_ratio = sp_ratio;
  ckpt.achieved_sparsity = achieved;
  checkpoint_capture(model, ckpt);
  save_checkpoint(path, ckpt);
}

std::vector<std::pair<std::string, int64_t>> layer_sizes(const Model& model) {
  std::vector<std::pair<std::string, int64_t>> out;
  for (const auto& p : model.prunable())
    out.emplace_back(p.layer_name, p.raw.numel());
  return out;
}

}  // namespace

RunResult train_run(Model& model, const TrainConfig& cfg, const Dataset& data,
                    const RunOptions& options) {
  cfg.validate();
  data.validate();
  if (data.train_n < cfg.batch_size)
    fail(ErrorKind::kConfig, "train_run: train split smaller than one batch");
  if (cfg.schedule_kind == ScheduleKind::kLrrCycle)
    fail(ErrorKind::kConfig, "train_run: lrr_cycle schedule needs lrr_run");
  const int64_t spe = data.train_n / cfg.batch_size;

  SparsitySchedule schedule;
  schedule.kind = cfg.schedule_kind;
  schedule.s_final = cfg.s_final;
  schedule.start_step = cfg.sparsity_start_epoch * spe;
  schedule.end_step = cfg.sparsity_end_epoch * spe;
  schedule.validate();

  Trainer trainer(model, cfg, spe);
  SwitchTracker tracker(layer_sizes(model), cfg.epochs, cfg.switch_groups);
  RunResult result;

  const bool out = !options.out_dir.empty();
  if (out) fs::create_directories(options.out_dir);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochOutcome eo = run_one_epoch(trainer, data, cfg, &schedule, 0.0, epoch, epoch);
    tracker.record(eo.masks, epoch);
    auto rows = layer_rows_for(model, eo.masks, epoch);
    result.layer_rows.insert(result.layer_rows.end(), rows.begin(), rows.end());
    result.records.push_back(eo.record);
    if (eo.record.val_acc > result.best_val_acc) {
      result.best_val_acc = eo.record.val_acc;
      if (out)
        save_model_checkpoint(options.out_dir + "/checkpoint_best.st3ckpt",
                              model, options.config_text,
                              eo.record.target_sparsity,
                              eo.record.achieved_sparsity);
    }
  }

  const RunRecord& last = result.records.back();
  result.final_val_acc = last.val_acc;
  result.achieved_sparsity = last.achieved_sparsity;
  result.sparse_flops = last.sparse_flops;
  result.dense_flops = last.dense_flops;
  result.final_test_acc =
      data.test_n > 0 ? trainer.evaluate(data, 2, last.target_sparsity).acc
                      : last.val_acc;
  for (int g = 0; g < tracker.n_groups(); ++g)
    result.switch_totals.push_back(tracker.total_switches(g));
  result.switch_hist = tracker.switch_histogram();

  if (out) {
    write_runrecords(options.out_dir + "/runrecord.csv", result.records);
    write_layer_rows(options.out_dir + "/layers.csv", result.layer_rows);
    write_switch_rows(options.out_dir + "/switches.csv", result.switch_hist);
    save_model_checkpoint(options.out_dir + "/checkpoint_final.st3ckpt", model,
                          options.config_text, last.target_sparsity,
                          last.achieved_sparsity);
  }
  return result;
}

RunResult lrr_run(Model& model, const TrainConfig& cfg, const Dataset& data,
                  int64_t cycles, double prune_fraction, LrrInner inner,
                  const RunOptions& options) {
  if (cycles < 1)
    fail(ErrorKind::kConfig, "lrr_run: cycles must be >= 1");
  if (!(prune_fraction > 0.0 && prune_fraction < 1.0))
    fail(ErrorKind::kConfig, "lrr_run: prune_fraction must lie in (0, 1)");
  TrainConfig base = cfg;
  base.method = Method::kDense;
  base.schedule_kind = ScheduleKind::kConstant;
  base.s_final = 0.0;
  base.validate();
  data.validate();
  if (data.train_n < cfg.batch_size)
    fail(ErrorKind::kConfig, "lrr_run: train split smaller than one batch");
  const int64_t spe = data.train_n / cfg.batch_size;
  const int64_t total_epochs = (cycles + 1) * cfg.epochs;

  Trainer trainer(model, base, spe);
  SwitchTracker tracker(layer_sizes(model), total_epochs, cfg.switch_groups);
  RunResult result;
  const bool out = !options.out_dir.empty();
  if (out) fs::create_directories(options.out_dir);

  TrainConfig inner_cfg = base;
  inner_cfg.method = inner == LrrInner::kSt3 ? Method::kSt3 : Method::kGmp;

  int64_t epoch_global = 0;
  for (int64_t cycle = 0; cycle <= cycles; ++cycle) {
    double target = 0.0;
    if (cycle > 0) {
      target = 1.0 - std::pow(1.0 - prune_fraction, static_cast<double>(cycle));
      result.cycle_targets.push_back(target);
      trainer.set_method(inner_cfg.method);
      trainer.start_cycle();
    }
    for (int64_t e = 0; e < cfg.epochs; ++e, ++epoch_global) {
      const int64_t aug_epoch = cfg.reset_aug_seed_on_cycle ? e : epoch_global;
      EpochOutcome eo = run_one_epoch(trainer, data, cycle == 0 ? base : inner_cfg,
                                      nullptr, target, epoch_global, aug_epoch);
      tracker.record(eo.masks, epoch_global);
      auto rows = layer_rows_for(model, eo.masks, epoch_global);
      result.layer_rows.insert(result.layer_rows.end(), rows.begin(), rows.end());
      result.records.push_back(eo.record);
      result.best_val_acc = std::max(result.best_val_acc, eo.record.val_acc);
    }
  }

  const RunRecord& last = result.records.back();
  result.final_val_acc = last.val_acc;
  result.achieved_sparsity = last.achieved_sparsity;
  result.sparse_flops = last.sparse_flops;
  result.dense_flops = last.dense_flops;
  result.final_test_acc =
      data.test_n > 0 ? trainer.evaluate(data, 2, last.target_sparsity).acc
                      : last.val_acc;
  for (int g = 0; g < tracker.n_groups(); ++g)
    result.switch_totals.push_back(tracker.total_switches(g));
  result.switch_hist = tracker.switch_histogram();

  if (out) {
    write_runrecords(options.out_dir + "/runrecord.csv", result.records);
    write_layer_rows(options.out_dir + "/layers.csv", result.layer_rows);
    write_switch_rows(options.out_dir + "/switches.csv", result.switch_hist);
    save_model_checkpoint(options.out_dir + "/checkpoint_final.st3ckpt", model,
                          options.config_text, last.target_sparsity,
                          last.achieved_sparsity);
  }
  return result;
}

}  // namespace st3
