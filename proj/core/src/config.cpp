#include "st3/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace st3 {

using json = nlohmann::ordered_json;

Method parse_method(const std::string& s) {
  if (s == "dense") return Method::kDense;
  if (s == "st3") return Method::kSt3;
  if (s == "gmp") return Method::kGmp;
  fail(ErrorKind::kConfig, "unknown method '" + s + "'");
}

ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "soft") return ThresholdMode::kSoft;
  if (s == "hard") return ThresholdMode::kHard;
  fail(ErrorKind::kConfig, "unknown threshold_mode '" + s + "'");
}

Allocation parse_allocation(const std::string& s) {
  if (s == "global_l1") return Allocation::kGlobalL1;
  if (s == "sigma") return Allocation::kSigma;
  if (s == "lamp") return Allocation::kLamp;
  fail(ErrorKind::kConfig, "unknown allocation '" + s + "'");
}

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "cubic") return ScheduleKind::kCubic;
  if (s == "constant") return ScheduleKind::kConstant;
  fail(ErrorKind::kConfig, "unknown schedule kind '" + s + "'");
}

namespace {

// Tracks which keys were consumed so leftovers can be reported by path.
class StrictObj {
 public:
  StrictObj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      fail(ErrorKind::kConfig, path_ + " must be an object");
  }

  ~StrictObj() = default;

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::kConfig, "bad value for key '" + join(key) + "'");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  std::string join(const char* key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        fail(ErrorKind::kConfig, "unknown config key '" + join(it.key().c_str()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_dataset(const json& j, DatasetSpec& d) {
  StrictObj o(j, "dataset");
  d.kind = o.get<std::string>("kind", d.kind);
  d.classes = o.get<int64_t>("classes", d.classes);
  d.dim = o.get<int64_t>("dim", d.dim);
  d.n_per_class = o.get<int64_t>("n_per_class", d.n_per_class);
  d.separation = o.get<double>("separation", d.separation);
  d.noise = o.get<double>("noise", d.noise);
  d.n = o.get<int64_t>("n", d.n);
  d.teacher_hidden = o.get<int64_t>("teacher_hidden", d.teacher_hidden);
  d.data_seed = o.get<uint64_t>("data_seed", d.data_seed);
  d.root = o.get<std::string>("root", d.root);
  d.subset_train = o.get<int64_t>("subset_train", d.subset_train);
  d.full = o.get<bool>("full", d.full);
  o.finish();
}

void parse_model(const json& j, ModelSpec& m) {
  StrictObj o(j, "model");
  m.arch = o.get<std::string>("arch", m.arch);
  m.hidden = o.get<std::vector<int64_t>>("hidden", m.hidden);
  m.depth = o.get<int>("depth", m.depth);
  m.width = o.get<int>("width", m.width);
  o.finish();
}

void parse_train(const json& j, TrainConfig& t) {
  StrictObj o(j, "train");
  t.epochs = o.get<int64_t>("epochs", t.epochs);
  t.batch_size = o.get<int64_t>("batch_size", t.batch_size);
  t.lr = o.get<double>("lr", t.lr);
  t.momentum = o.get<double>("momentum", t.momentum);
  t.weight_decay = o.get<double>("weight_decay", t.weight_decay);
  t.grad_clip_norm = o.get<double>("grad_clip_norm", t.grad_clip_norm);
  t.seed = o.get<uint64_t>("seed", t.seed);
  t.method = parse_method(o.get<std::string>("method", method_name(t.method)));
  if (const json* ls = o.child("lr_schedule")) {
    StrictObj lo(*ls, "train.lr_schedule");
    const std::string kind = lo.get<std::string>(
        "kind", t.lr_schedule.kind == LrScheduleConfig::Kind::kStep ? "step" : "cosine");
    if (kind == "step")
      t.lr_schedule.kind = LrScheduleConfig::Kind::kStep;
    else if (kind == "cosine")
      t.lr_schedule.kind = LrScheduleConfig::Kind::kCosine;
    else
      fail(ErrorKind::kConfig, "unknown lr schedule kind '" + kind + "'");
    t.lr_schedule.milestones =
        lo.get<std::vector<int64_t>>("milestones", t.lr_schedule.milestones);
    t.lr_schedule.gamma = lo.get<double>("gamma", t.lr_schedule.gamma);
    t.lr_schedule.warmup_epochs =
        lo.get<int64_t>("warmup_epochs", t.lr_schedule.warmup_epochs);
    lo.finish();
  }
  o.finish();
}

void parse_sparsify(const json& j, SparsifyConfig& s) {
  StrictObj o(j, "sparsify");
  s.threshold_mode = parse_threshold_mode(
      o.get<std::string>("threshold_mode", threshold_mode_name(s.threshold_mode)));
  s.rescale = o.get<bool>("rescale", s.rescale);
  s.allocation =
      parse_allocation(o.get<std::string>("allocation", allocation_name(s.allocation)));
  o.finish();
}

void parse_schedule(const json& j, TrainConfig& t) {
  StrictObj o(j, "schedule");
  t.schedule_kind = parse_schedule_kind(
      o.get<std::string>("kind", schedule_kind_name(t.schedule_kind)));
  t.s_final = o.get<double>("s_final", t.s_final);
  t.sparsity_start_epoch = o.get<int64_t>("start_epoch", t.sparsity_start_epoch);
  t.sparsity_end_epoch = o.get<int64_t>("end_epoch", t.sparsity_end_epoch);
  o.finish();
}

void parse_lrr(const json& j, ExperimentConfig& cfg) {
  StrictObj o(j, "lrr");
  cfg.lrr.cycles = o.get<int64_t>("cycles", cfg.lrr.cycles);
  cfg.lrr.prune_fraction = o.get<double>("prune_fraction", cfg.lrr.prune_fraction);
  cfg.lrr.inner = o.get<std::string>("inner", cfg.lrr.inner);
  cfg.train.reset_momentum_on_cycle =
      o.get<bool>("reset_momentum", cfg.train.reset_momentum_on_cycle);
  cfg.train.reset_aug_seed_on_cycle =
      o.get<bool>("reset_aug_seed", cfg.train.reset_aug_seed_on_cycle);
  o.finish();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  StrictObj o(j, "");
  cfg.name = o.get<std::string>("name", cfg.name);
  cfg.out_dir = o.get<std::string>("out_dir", cfg.out_dir);
  cfg.seeds = o.get<std::vector<uint64_t>>("seeds", cfg.seeds);
  if (const json* c = o.child("dataset")) parse_dataset(*c, cfg.dataset);
  if (const json* c = o.child("model")) parse_model(*c, cfg.model);
  if (const json* c = o.child("train")) parse_train(*c, cfg.train);
  if (const json* c = o.child("sparsify")) parse_sparsify(*c, cfg.train.sparsify);
  if (const json* c = o.child("schedule")) parse_schedule(*c, cfg.train);
  if (const json* c = o.child("lrr")) parse_lrr(*c, cfg);
  if (const json* c = o.child("metrics")) {
    StrictObj mo(*c, "metrics");
    cfg.train.switch_groups = static_cast<int>(
        mo.get<int64_t>("switch_groups", cfg.train.switch_groups));
    mo.finish();
  }
  o.finish();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["out_dir"] = cfg.out_dir;
  j["seeds"] = cfg.seeds;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"classes", cfg.dataset.classes},
                  {"dim", cfg.dataset.dim},
                  {"n_per_class", cfg.dataset.n_per_class},
                  {"separation", cfg.dataset.separation},
                  {"noise", cfg.dataset.noise},
                  {"n", cfg.dataset.n},
                  {"teacher_hidden", cfg.dataset.teacher_hidden},
                  {"data_seed", cfg.dataset.data_seed},
                  {"root", cfg.dataset.root},
                  {"subset_train", cfg.dataset.subset_train},
                  {"full", cfg.dataset.full}};
  j["model"] = {{"arch", cfg.model.arch},
                {"hidden", cfg.model.hidden},
                {"depth", cfg.model.depth},
                {"width", cfg.model.width}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"grad_clip_norm", cfg.train.grad_clip_norm},
                {"seed", cfg.train.seed},
                {"method", method_name(cfg.train.method)},
                {"lr_schedule",
                 {{"kind", cfg.train.lr_schedule.kind == LrScheduleConfig::Kind::kStep
                               ? "step"
                               : "cosine"},
                  {"milestones", cfg.train.lr_schedule.milestones},
                  {"gamma", cfg.train.lr_schedule.gamma},
                  {"warmup_epochs", cfg.train.lr_schedule.warmup_epochs}}}};
  j["sparsify"] = {{"threshold_mode", threshold_mode_name(cfg.train.sparsify.threshold_mode)},
                   {"rescale", cfg.train.sparsify.rescale},
                   {"allocation", allocation_name(cfg.train.sparsify.allocation)}};
  j["schedule"] = {{"kind", schedule_kind_name(cfg.train.schedule_kind)},
                   {"s_final", cfg.train.s_final},
                   {"start_epoch", cfg.train.sparsity_start_epoch},
                   {"end_epoch", cfg.train.sparsity_end_epoch}};
  j["lrr"] = {{"cycles", cfg.lrr.cycles},
              {"prune_fraction", cfg.lrr.prune_fraction},
              {"inner", cfg.lrr.inner},
              {"reset_momentum", cfg.train.reset_momentum_on_cycle},
              {"reset_aug_seed", cfg.train.reset_aug_seed_on_cycle}};
  j["metrics"] = {{"switch_groups", cfg.train.switch_groups}};
  return j.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) fail(ErrorKind::kConfig, "config: seeds must not be empty");
  if (dataset.kind != "synth_gaussians" && dataset.kind != "synth_teacher" &&
      dataset.kind != "mnist" && dataset.kind != "cifar10")
    fail(ErrorKind::kConfig, "unknown dataset kind '" + dataset.kind + "'");
  if (model.arch != "mlp" && model.arch != "lenet" && model.arch != "mini_resnet")
    fail(ErrorKind::kConfig, "unknown model arch '" + model.arch + "'");
  if (lrr.inner != "st3" && lrr.inner != "hard_prune")
    fail(ErrorKind::kConfig, "unknown lrr inner method '" + lrr.inner + "'");
  train.validate();
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, int64_t in_dim,
                                   int64_t classes, uint64_t seed) {
  if (spec.arch == "mlp") return build_mlp(in_dim, spec.hidden, classes, seed);
  if (spec.arch == "lenet") return build_lenet(classes, seed);
  if (spec.arch == "mini_resnet")
    return build_mini_resnet(spec.depth, spec.width, classes, seed);
  fail(ErrorKind::kConfig, "unknown model arch '" + spec.arch + "'");
}

Dataset build_dataset(const DatasetSpec& spec, const std::string& root_override) {
  const std::string root = root_override.empty() ? spec.root : root_override;
  if (spec.kind == "synth_gaussians")
    return synth_gaussians(spec.classes, spec.dim, spec.n_per_class,
                           spec.data_seed, spec.separation, spec.noise);
  if (spec.kind == "synth_teacher")
    return synth_teacher(spec.classes, spec.dim, spec.n, spec.teacher_hidden,
                         spec.data_seed);
  if (spec.kind == "mnist") {
    if (root.empty())
      fail(ErrorKind::kConfig, "mnist needs --dataset-root or ST3_DATA_ROOT");
    return load_idx(root + "/mnist", spec.full, spec.subset_train);
  }
  if (spec.kind == "cifar10") {
    if (root.empty())
      fail(ErrorKind::kConfig, "cifar10 needs --dataset-root or ST3_DATA_ROOT");
    return load_cifar10(root + "/cifar10", spec.full, spec.subset_train);
  }
  fail(ErrorKind::kConfig, "unknown dataset kind '" + spec.kind + "'");
}

}  // namespace st3
