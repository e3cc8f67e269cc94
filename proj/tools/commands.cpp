#include "commands.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "st3/checkpoint.hpp"
#include "st3/csv.hpp"
#include "st3/metrics.hpp"

namespace st3::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// --------------------------------------------------------------------------
// presets

namespace {

const char* kPresetSynthDense = R"json({
  "name": "mlp-synth-dense",
  "out_dir": "runs/mlp-synth-dense",
  "seeds": [1, 2, 3],
  "dataset": {"kind": "synth_gaussians", "classes": 4, "dim": 16, "n_per_class": 600, "separation": 2.5, "noise": 1.0, "data_seed": 7},
  "model": {"arch": "mlp", "hidden": [32]},
  "train": {"epochs": 8, "batch_size": 64, "lr": 0.1, "momentum": 0.9, "weight_decay": 0.0001, "grad_clip_norm": 3.0, "seed": 1, "method": "dense",
            "lr_schedule": {"kind": "step", "milestones": [5, 7], "gamma": 0.1}},
  "schedule": {"kind": "cubic", "s_final": 0.0, "start_epoch": 1, "end_epoch": 6}
})json";

const char* kPresetSynthSt3 = R"json({
  "name": "mlp-synth-st3",
  "out_dir": "runs/mlp-synth-st3",
  "seeds": [1, 2, 3],
  "dataset": {"kind": "synth_gaussians", "classes": 4, "dim": 16, "n_per_class": 600, "separation": 2.5, "noise": 1.0, "data_seed": 7},
  "model": {"arch": "mlp", "hidden": [32]},
  "train": {"epochs": 10, "batch_size": 64, "lr": 0.1, "momentum": 0.9, "weight_decay": 0.0001, "grad_clip_norm": 3.0, "seed": 1, "method": "st3",
            "lr_schedule": {"kind": "step", "milestones": [7, 9], "gamma": 0.1}},
  "sparsify": {"threshold_mode": "soft", "rescale": true, "allocation": "global_l1"},
  "schedule": {"kind": "cubic", "s_final": 0.9, "start_epoch": 1, "end_epoch": 6}
})json";

const char* kPresetTeacherSt3 = R"json({
  "name": "mlp-teacher-st3",
  "out_dir": "runs/mlp-teacher-st3",
  "seeds": [1, 2, 3],
  "dataset": {"kind": "synth_teacher", "classes": 10, "dim": 32, "n": 13333, "teacher_hidden": 64, "data_seed": 7},
  "model": {"arch": "mlp", "hidden": [96, 64]},
  "train": {"epochs": 30, "batch_size": 128, "lr": 0.1, "momentum": 0.9, "weight_decay": 0.0001, "grad_clip_norm": 3.0, "seed": 1, "method": "st3",
            "lr_schedule": {"kind": "step", "milestones": [18, 25], "gamma": 0.1}},
  "sparsify": {"threshold_mode": "soft", "rescale": true, "allocation": "global_l1"},
  "schedule": {"kind": "cubic", "s_final": 0.9, "start_epoch": 2, "end_epoch": 15}
})json";

const char* kPresetLenetMnist = R"json({
  "name": "lenet-mnist-st3",
  "out_dir": "runs/lenet-mnist-st3",
  "seeds": [1, 2, 3],
  "dataset": {"kind": "mnist", "subset_train": 10000, "full": false},
  "model": {"arch": "lenet"},
  "train": {"epochs": 10, "batch_size": 128, "lr": 0.1, "momentum": 0.9, "weight_decay": 0.0001, "grad_clip_norm": 3.0, "seed": 1, "method": "st3",
            "lr_schedule": {"kind": "step", "milestones": [6, 8], "gamma": 0.1}},
  "sparsify": {"threshold_mode": "soft", "rescale": true, "allocation": "global_l1"},
  "schedule": {"kind": "cubic", "s_final": 0.9, "start_epoch": 1, "end_epoch": 5}
})json";

const char* kPresetResnetCifar = R"json({
  "name": "resnet-cifar-st3",
  "out_dir": "runs/resnet-cifar-st3",
  "seeds": [1, 2, 3],
  "dataset": {"kind": "cifar10", "subset_train": 10000, "full": false},
  "model": {"arch": "mini_resnet", "depth": 8, "width": 8},
  "train": {"epochs": 20, "batch_size": 128, "lr": 0.1, "momentum": 0.9, "weight_decay": 0.0001, "grad_clip_norm": 3.0, "seed": 1, "method": "st3",
            "lr_schedule": {"kind": "step", "milestones": [10, 16], "gamma": 0.1}},
  "sparsify": {"threshold_mode": "soft", "rescale": true, "allocation": "global_l1"},
  "schedule": {"kind": "cubic", "s_final": 0.9, "start_epoch": 1, "end_epoch": 10}
})json";

}  // namespace

const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> kPresets = {
      {"mlp-synth-dense", kPresetSynthDense},
      {"mlp-synth-st3", kPresetSynthSt3},
      {"mlp-teacher-st3", kPresetTeacherSt3},
      {"lenet-mnist-st3", kPresetLenetMnist},
      {"resnet-cifar-st3", kPresetResnetCifar},
  };
  return kPresets;
}

ExperimentConfig resolve_config(const std::string& arg) {
  if (arg.empty()) fail(ErrorKind::kConfig, "--config is required");
  auto it = presets().find(arg);
  if (it != presets().end()) return parse_config_text(it->second);
  return load_config_file(arg);
}

// --------------------------------------------------------------------------
// run execution

namespace {

std::string env_data_root() {
  const char* v = std::getenv("ST3_DATA_ROOT");
  return v ? v : "";
}

void apply_common_overrides(ExperimentConfig& cfg, const CommonArgs& args) {
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (!args.dataset_root.empty()) cfg.dataset.root = args.dataset_root;
  else if (!env_data_root().empty() && cfg.dataset.root.empty())
    cfg.dataset.root = env_data_root();
  if (args.full_dataset) cfg.dataset.full = true;
}

void check_model_input(const ExperimentConfig& cfg, const Dataset& data) {
  if (cfg.model.arch == "lenet" && data.sample_shape != Shape{1, 28, 28})
    fail(ErrorKind::kConfig, "lenet expects 1x28x28 input");
  if (cfg.model.arch == "mini_resnet" && data.sample_shape != Shape{3, 32, 32})
    fail(ErrorKind::kConfig, "mini_resnet expects 3x32x32 input");
}

struct RunSummary {
  std::string label;
  std::string run_dir;
  uint64_t seed = 0;
  double sparsity_target = 0;
  double final_val_acc = 0, final_test_acc = 0;
  double achieved_sparsity = 0;
  double sparse_flops = 0, dense_flops = 0;
  bool resumed = false;
};

json summary_to_json(const RunSummary& s) {
  json j;
  j["label"] = s.label;
  j["seed"] = s.seed;
  j["sparsity_target"] = s.sparsity_target;
  j["final_val_acc"] = s.final_val_acc;
  j["final_test_acc"] = s.final_test_acc;
  j["achieved_sparsity"] = s.achieved_sparsity;
  j["sparse_flops"] = s.sparse_flops;
  j["dense_flops"] = s.dense_flops;
  return j;
}

RunSummary summary_from_json(const json& j, const std::string& run_dir) {
  RunSummary s;
  s.label = j.value("label", "");
  s.run_dir = run_dir;
  s.seed = j.value("seed", uint64_t{0});
  s.sparsity_target = j.value("sparsity_target", 0.0);
  s.final_val_acc = j.value("final_val_acc", 0.0);
  s.final_test_acc = j.value("final_test_acc", 0.0);
  s.achieved_sparsity = j.value("achieved_sparsity", 0.0);
  s.sparse_flops = j.value("sparse_flops", 0.0);
  s.dense_flops = j.value("dense_flops", 0.0);
  return s;
}

std::mutex g_manifest_mutex;

void append_manifest(const std::string& root, const std::string& line) {
  std::lock_guard<std::mutex> lock(g_manifest_mutex);
  const std::string path = root + "/manifest.txt";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) fail(ErrorKind::kIo, "cannot open manifest " + path);
  ::flock(fd, LOCK_EX);
  const std::string out = line + "\n";
  const ssize_t n = ::write(fd, out.data(), out.size());
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (n != static_cast<ssize_t>(out.size()))
    fail(ErrorKind::kIo, "short manifest write");
}

struct LrrPlan {
  int64_t cycles = 0;
  double prune_fraction = 0.5;
  LrrInner inner = LrrInner::kSt3;
};

RunSummary execute_run(const ExperimentConfig& cfg, const Dataset& data,
                       const std::string& run_dir, const std::string& label,
                       bool allow_resume, const LrrPlan* lrr_plan) {
  const std::string summary_path = run_dir + "/summary.json";
  const std::string final_ckpt = run_dir + "/checkpoint_final.st3ckpt";
  if (allow_resume && fs::exists(summary_path) && fs::exists(final_ckpt)) {
    std::ifstream f(summary_path);
    json j = json::parse(std::string(std::istreambuf_iterator<char>(f), {}));
    RunSummary s = summary_from_json(j, run_dir);
    s.resumed = true;
    return s;
  }

  check_model_input(cfg, data);
  auto model = build_model(cfg.model, shape_numel(data.sample_shape),
                           data.classes, cfg.train.seed);
  RunOptions options;
  options.out_dir = run_dir;
  options.config_text = config_to_text(cfg);

  RunResult result;
  double target = cfg.train.s_final;
  if (lrr_plan) {
    result = lrr_run(*model, cfg.train, data, lrr_plan->cycles,
                     lrr_plan->prune_fraction, lrr_plan->inner, options);
    target = result.cycle_targets.empty() ? 0.0 : result.cycle_targets.back();
  } else {
    result = train_run(*model, cfg.train, data, options);
    if (cfg.train.method == Method::kDense) target = 0.0;
  }

  RunSummary s;
  s.label = label;
  s.run_dir = run_dir;
  s.seed = cfg.train.seed;
  s.sparsity_target = target;
  s.final_val_acc = result.final_val_acc;
  s.final_test_acc = result.final_test_acc;
  s.achieved_sparsity = result.achieved_sparsity;
  s.sparse_flops = result.sparse_flops;
  s.dense_flops = result.dense_flops;

  std::ofstream f(summary_path);
  if (!f) fail(ErrorKind::kIo, "cannot write " + summary_path);
  f << summary_to_json(s).dump(2) << "\n";
  return s;
}

// Runs jobs on up to n threads; returns first error message, empty on
// success. Runs are independent; they share only the read-only dataset.
std::string run_parallel(std::vector<std::function<void()>>& jobs, int n_threads) {
  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::string first_error;
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        jobs[i]();
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(n_threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int i = 0; i < n - 1; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return first_error;
}

std::string sp_tag(double sp) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sp%.4f", sp);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

// --------------------------------------------------------------------------
// subcommands

int cmd_train(const CommonArgs& args) {
  ExperimentConfig cfg = resolve_config(args.config);
  apply_common_overrides(cfg, args);
  if (!args.seeds.empty()) cfg.train.seed = args.seeds.front();
  if (!args.sparsities.empty()) cfg.train.s_final = args.sparsities.front();
  cfg.validate();
  Dataset data = build_dataset(cfg.dataset, "");
  RunSummary s = execute_run(cfg, data, cfg.out_dir, cfg.name,
                             /*allow_resume=*/false, nullptr);
  std::printf(
      "final: val_acc=%.4f test_acc=%.4f sparsity=%.4f sparse_flops=%.3e (2 FLOPS per MAC)\n",
      s.final_val_acc, s.final_test_acc, s.achieved_sparsity, s.sparse_flops);
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  ExperimentConfig cfg = resolve_config(args.config);
  apply_common_overrides(cfg, args);
  cfg.validate();
  const std::vector<double> sparsities =
      args.sparsities.empty() ? std::vector<double>{cfg.train.s_final}
                              : args.sparsities;
  const std::vector<uint64_t> seeds = args.seeds.empty() ? cfg.seeds : args.seeds;
  Dataset data = build_dataset(cfg.dataset, "");
  fs::create_directories(cfg.out_dir);

  struct Cell {
    double sp;
    uint64_t seed;
    RunSummary summary;
  };
  std::vector<Cell> cells;
  for (double sp : sparsities)
    for (uint64_t seed : seeds) cells.push_back({sp, seed, {}});

  std::vector<std::function<void()>> jobs;
  for (auto& cell : cells) {
    jobs.push_back([&cfg, &data, &cell]() {
      ExperimentConfig run_cfg = cfg;
      run_cfg.train.s_final = cell.sp;
      run_cfg.train.seed = cell.seed;
      const std::string dir = cfg.out_dir + "/" + sp_tag(cell.sp) + "_seed" +
                              std::to_string(cell.seed);
      cell.summary = execute_run(run_cfg, data, dir, "sweep", true, nullptr);
      append_manifest(cfg.out_dir, dir + (cell.summary.resumed ? " resumed" : " done"));
    });
  }
  const std::string err = run_parallel(jobs, args.jobs);
  if (!err.empty()) {
    std::fprintf(stderr, "sweep failed: %s\n", err.c_str());
    return 1;
  }

  csv::Writer w(cfg.out_dir + "/sweep.csv",
                {"sparsity", "n_runs", "mean_acc", "std_acc",
                 "mean_achieved_sparsity", "mean_sparse_flops"});
  for (double sp : sparsities) {
    std::vector<double> accs, ach, fl;
    for (const auto& cell : cells)
      if (cell.sp == sp) {
        accs.push_back(cell.summary.final_test_acc);
        ach.push_back(cell.summary.achieved_sparsity);
        fl.push_back(cell.summary.sparse_flops);
      }
    w.row({csv::fmt_double(sp), csv::fmt_int(static_cast<int64_t>(accs.size())),
           csv::fmt_double(mean_of(accs)), csv::fmt_double(std_of(accs)),
           csv::fmt_double(mean_of(ach)), csv::fmt_double(mean_of(fl))});
    std::printf("sweep sp=%.4f: mean_acc=%.4f std=%.4f (%zu runs)\n", sp,
                mean_of(accs), std_of(accs), accs.size());
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  ExperimentConfig cfg = resolve_config(args.config);
  apply_common_overrides(cfg, args);
  cfg.train.method = Method::kSt3;
  cfg.validate();
  const std::vector<double> sparsities =
      args.sparsities.empty() ? std::vector<double>{cfg.train.s_final}
                              : args.sparsities;
  const std::vector<uint64_t> seeds = args.seeds.empty() ? cfg.seeds : args.seeds;
  Dataset data = build_dataset(cfg.dataset, "");
  fs::create_directories(cfg.out_dir);

  struct Arm {
    ThresholdMode mode;
    bool rescale;
    Allocation alloc;
    std::string name;
  };
  std::vector<Arm> arms;
  for (ThresholdMode mode : {ThresholdMode::kSoft, ThresholdMode::kHard})
    for (bool rescale : {true, false})
      for (Allocation alloc : {Allocation::kGlobalL1, Allocation::kLamp}) {
        Arm a{mode, rescale, alloc, ""};
        a.name = std::string(threshold_mode_name(mode)) +
                 (rescale ? "+rescale" : "+norescale") + "+" +
                 allocation_name(alloc);
        arms.push_back(a);
      }

  struct Cell {
    Arm arm;
    double sp;
    uint64_t seed;
    RunSummary summary;
  };
  std::vector<Cell> cells;
  for (const auto& arm : arms)
    for (double sp : sparsities)
      for (uint64_t seed : seeds) cells.push_back({arm, sp, seed, {}});
  std::printf("ablate: %zu runs scheduled\n", cells.size());

  std::vector<std::function<void()>> jobs;
  for (auto& cell : cells) {
    jobs.push_back([&cfg, &data, &cell]() {
      ExperimentConfig run_cfg = cfg;
      run_cfg.train.sparsify.threshold_mode = cell.arm.mode;
      run_cfg.train.sparsify.rescale = cell.arm.rescale;
      run_cfg.train.sparsify.allocation = cell.arm.alloc;
      run_cfg.train.s_final = cell.sp;
      run_cfg.train.seed = cell.seed;
      const std::string dir = cfg.out_dir + "/" + cell.arm.name + "_" +
                              sp_tag(cell.sp) + "_seed" + std::to_string(cell.seed);
      cell.summary = execute_run(run_cfg, data, dir, cell.arm.name, true, nullptr);
      append_manifest(cfg.out_dir, dir + (cell.summary.resumed ? " resumed" : " done"));
    });
  }
  const std::string err = run_parallel(jobs, args.jobs);
  if (!err.empty()) {
    std::fprintf(stderr, "ablate failed: %s\n", err.c_str());
    return 1;
  }

  const double collapse_threshold = 2.0 / static_cast<double>(data.classes);
  csv::Writer w(cfg.out_dir + "/ablation.csv",
                {"arm", "threshold_mode", "rescale", "allocation", "sparsity",
                 "seed", "final_acc", "achieved_sparsity", "collapsed"});
  for (const auto& cell : cells) {
    w.row({cell.arm.name, threshold_mode_name(cell.arm.mode),
           cell.arm.rescale ? "1" : "0", allocation_name(cell.arm.alloc),
           csv::fmt_double(cell.sp), csv::fmt_int(static_cast<int64_t>(cell.seed)),
           csv::fmt_double(cell.summary.final_test_acc),
           csv::fmt_double(cell.summary.achieved_sparsity),
           cell.summary.final_test_acc < collapse_threshold ? "1" : "0"});
  }
  return 0;
}

int cmd_lrr(const LrrArgs& args) {
  ExperimentConfig cfg = resolve_config(args.config);
  apply_common_overrides(cfg, args);
  if (args.cycles > 0) cfg.lrr.cycles = args.cycles;
  if (args.prune_fraction > 0) cfg.lrr.prune_fraction = args.prune_fraction;
  if (!args.inner.empty()) cfg.lrr.inner = args.inner;
  cfg.train.schedule_kind = ScheduleKind::kConstant;
  cfg.validate();
  const std::vector<uint64_t> seeds = args.seeds.empty() ? cfg.seeds : args.seeds;
  Dataset data = build_dataset(cfg.dataset, "");
  fs::create_directories(cfg.out_dir);

  LrrPlan plan;
  plan.cycles = cfg.lrr.cycles;
  plan.prune_fraction = cfg.lrr.prune_fraction;
  plan.inner = cfg.lrr.inner == "st3" ? LrrInner::kSt3 : LrrInner::kHardPrune;

  struct Cell {
    uint64_t seed;
    RunSummary summary;
  };
  std::vector<Cell> cells;
  for (uint64_t seed : seeds) cells.push_back({seed, {}});

  std::vector<std::function<void()>> jobs;
  for (auto& cell : cells) {
    jobs.push_back([&cfg, &data, &cell, &plan]() {
      ExperimentConfig run_cfg = cfg;
      run_cfg.train.seed = cell.seed;
      const std::string dir = cfg.out_dir + "/lrr_" + cfg.lrr.inner + "_seed" +
                              std::to_string(cell.seed);
      cell.summary = execute_run(run_cfg, data, dir, "lrr+" + cfg.lrr.inner, true, &plan);
      append_manifest(cfg.out_dir, dir + (cell.summary.resumed ? " resumed" : " done"));
    });
  }
  const std::string err = run_parallel(jobs, args.jobs);
  if (!err.empty()) {
    std::fprintf(stderr, "lrr failed: %s\n", err.c_str());
    return 1;
  }

  csv::Writer w(cfg.out_dir + "/lrr.csv",
                {"inner", "seed", "cycles", "prune_fraction", "final_target",
                 "final_acc", "achieved_sparsity"});
  std::vector<double> accs;
  for (const auto& cell : cells) {
    w.row({cfg.lrr.inner, csv::fmt_int(static_cast<int64_t>(cell.seed)),
           csv::fmt_int(cfg.lrr.cycles), csv::fmt_double(cfg.lrr.prune_fraction),
           csv::fmt_double(cell.summary.sparsity_target),
           csv::fmt_double(cell.summary.final_test_acc),
           csv::fmt_double(cell.summary.achieved_sparsity)});
    accs.push_back(cell.summary.final_test_acc);
  }
  std::printf("lrr %s: mean_acc=%.4f over %zu seeds\n", cfg.lrr.inner.c_str(),
              mean_of(accs), accs.size());
  return 0;
}

int cmd_report(const std::string& run_dir) {
  std::vector<std::string> run_dirs;
  if (fs::exists(run_dir + "/summary.json")) run_dirs.push_back(run_dir);
  if (fs::is_directory(run_dir))
    for (const auto& entry : fs::directory_iterator(run_dir))
      if (entry.is_directory() && fs::exists(entry.path() / "summary.json"))
        run_dirs.push_back(entry.path().string());
  std::sort(run_dirs.begin(), run_dirs.end());
  if (run_dirs.empty()) {
    std::fprintf(stderr, "no runs found under %s\n", run_dir.c_str());
    return 1;
  }

  struct Row {
    RunSummary summary;
    double recomputed_flops = 0;
    int64_t record_rows = 0;
  };
  std::vector<Row> rows;
  std::vector<SwitchTracker::HistRow> all_switches;
  for (const auto& dir : run_dirs) {
    Row row;
    std::ifstream f(dir + "/summary.json");
    row.summary = summary_from_json(
        json::parse(std::string(std::istreambuf_iterator<char>(f), {})), dir);
    const auto records = read_runrecords(dir + "/runrecord.csv");
    row.record_rows = static_cast<int64_t>(records.size());
    // Re-derive the sparse FLOPS from layers.csv: prunable MACs at the
    // final epoch plus the non-prunable remainder from runrecord.csv.
    const auto layers = read_layer_rows(dir + "/layers.csv");
    const int64_t last_epoch = records.back().epoch;
    double mac_sparse = 0, mac_dense = 0;
    for (const auto& lr : layers)
      if (lr.epoch == last_epoch) {
        mac_sparse += lr.mac_sparse;
        mac_dense += static_cast<double>(lr.mac_dense);
      }
    const double extra = records.back().dense_flops - 2.0 * mac_dense;
    row.recomputed_flops = 2.0 * mac_sparse + extra;
    if (fs::exists(dir + "/switches.csv")) {
      auto sw = read_switch_rows(dir + "/switches.csv");
      all_switches.insert(all_switches.end(), sw.begin(), sw.end());
    }
    rows.push_back(std::move(row));
  }

  const std::string report_dir = run_dir + "/report";
  fs::create_directories(report_dir);

  // accuracy vs sparsity, grouped by target
  std::set<double> targets;
  for (const auto& r : rows) targets.insert(r.summary.sparsity_target);
  {
    csv::Writer w(report_dir + "/accuracy.csv",
                  {"sparsity", "log10_density", "n_runs", "mean_val_acc",
                   "std_val_acc", "mean_test_acc", "std_test_acc"});
    for (double sp : targets) {
      std::vector<double> val, test;
      for (const auto& r : rows)
        if (r.summary.sparsity_target == sp) {
          val.push_back(r.summary.final_val_acc);
          test.push_back(r.summary.final_test_acc);
        }
      const double density = std::max(1e-12, 1.0 - sp);
      w.row({csv::fmt_double(sp), csv::fmt_double(std::log10(density)),
             csv::fmt_int(static_cast<int64_t>(val.size())),
             csv::fmt_double(mean_of(val)), csv::fmt_double(std_of(val)),
             csv::fmt_double(mean_of(test)), csv::fmt_double(std_of(test))});
    }
  }
  {
    csv::Writer w(report_dir + "/flops.csv",
                  {"sparsity", "mean_sparse_flops", "log10_sparse_flops",
                   "mean_test_acc", "n_runs"});
    for (double sp : targets) {
      std::vector<double> fl, test;
      for (const auto& r : rows)
        if (r.summary.sparsity_target == sp) {
          fl.push_back(r.recomputed_flops);
          test.push_back(r.summary.final_test_acc);
        }
      w.row({csv::fmt_double(sp), csv::fmt_double(mean_of(fl)),
             csv::fmt_double(std::log10(std::max(1.0, mean_of(fl)))),
             csv::fmt_double(mean_of(test)),
             csv::fmt_int(static_cast<int64_t>(fl.size()))});
    }
  }
  // aggregated switch histogram
  {
    std::map<std::tuple<int, bool, int64_t>, int64_t> agg;
    for (const auto& s : all_switches)
      agg[{s.group, s.final_active, s.switch_count}] += s.n_weights;
    std::vector<SwitchTracker::HistRow> merged;
    for (const auto& [key, n] : agg)
      merged.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), n});
    write_switch_rows(report_dir + "/switches.csv", merged);
  }
  {
    std::ofstream rep(report_dir + "/report.txt");
    rep << "runs: " << rows.size() << "\n";
    rep << "record rows: ";
    int64_t total_records = 0;
    for (const auto& r : rows) total_records += r.record_rows;
    rep << total_records << "\n\n";
    rep << "FLOPS convention: 1 MAC = 2 FLOPS\n\n";
    rep << "accuracy vs sparsity (log10 density):\n";
    for (double sp : targets) {
      std::vector<double> test;
      for (const auto& r : rows)
        if (r.summary.sparsity_target == sp) test.push_back(r.summary.final_test_acc);
      char line[128];
      std::snprintf(line, sizeof(line), "  sp=%.4f  log10(1-sp)=%+.3f  acc=%.4f +- %.4f (n=%zu)\n",
                    sp, std::log10(std::max(1e-12, 1.0 - sp)), mean_of(test),
                    std_of(test), test.size());
      rep << line;
    }
    rep << "\nper-run:\n";
    for (const auto& r : rows) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "  %s seed=%llu sp=%.4f acc=%.4f flops=%.3e\n",
                    r.summary.run_dir.c_str(),
                    static_cast<unsigned long long>(r.summary.seed),
                    r.summary.sparsity_target, r.summary.final_test_acc,
                    r.recomputed_flops);
      rep << line;
    }
  }
  std::printf("report written to %s (%zu runs)\n", report_dir.c_str(), rows.size());
  return 0;
}

}  // namespace st3::cli
