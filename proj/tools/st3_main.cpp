#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "st3/common.hpp"

namespace {

void add_common(CLI::App* sub, st3::cli::CommonArgs& args, bool multi) {
  sub->add_option("--config", args.config, "Config file path or preset name")
      ->required();
  sub->add_option("--out", args.out_dir, "Output directory override");
  sub->add_option("--dataset-root", args.dataset_root,
                  "Dataset root (falls back to ST3_DATA_ROOT)");
  sub->add_flag("--full-dataset", args.full_dataset,
                "Use the full dataset instead of the desk-scale subset");
  auto* seed = sub->add_option("--seed", args.seeds, "Seed override");
  auto* sp = sub->add_option("--sparsity", args.sparsities, "Target sparsity override");
  seed->delimiter(',');
  sp->delimiter(',');
  if (multi) {
    sub->add_option("--jobs", args.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  } else {
    seed->expected(0, 1);
    sp->expected(0, 1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ST-3 sparse-training experiments"};
  app.require_subcommand(1);

  st3::cli::CommonArgs train_args, sweep_args, ablate_args;
  st3::cli::LrrArgs lrr_args;
  std::string report_dir, dump_preset;

  auto* train = app.add_subcommand("train", "Run a single training run");
  add_common(train, train_args, false);

  auto* sweep = app.add_subcommand("sweep", "Sparsity x seed grid");
  add_common(sweep, sweep_args, true);

  auto* ablate = app.add_subcommand(
      "ablate", "Threshold-mode x rescale x allocation grid");
  add_common(ablate, ablate_args, true);

  auto* lrr = app.add_subcommand("lrr", "Multi-cycle rewinding driver");
  add_common(lrr, static_cast<st3::cli::CommonArgs&>(lrr_args), true);
  lrr->add_option("--cycles", lrr_args.cycles, "Pruning cycles after the dense one");
  lrr->add_option("--prune-fraction", lrr_args.prune_fraction,
                  "Fraction of remaining weights pruned per cycle");
  lrr->add_option("--inner", lrr_args.inner, "Inner method: st3 | hard_prune");

  auto* report = app.add_subcommand("report", "Summarize a directory of runs");
  report->add_option("run_dir", report_dir, "Directory with run outputs")->required();

  auto* presets = app.add_subcommand("presets", "List built-in presets");
  presets->add_option("--dump", dump_preset, "Print one preset as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 2 : 0;
  }

  try {
    if (train->parsed()) return st3::cli::cmd_train(train_args);
    if (sweep->parsed()) return st3::cli::cmd_sweep(sweep_args);
    if (ablate->parsed()) return st3::cli::cmd_ablate(ablate_args);
    if (lrr->parsed()) return st3::cli::cmd_lrr(lrr_args);
    if (report->parsed()) return st3::cli::cmd_report(report_dir);
    if (presets->parsed()) {
      if (!dump_preset.empty()) {
        auto it = st3::cli::presets().find(dump_preset);
        if (it == st3::cli::presets().end()) {
          std::fprintf(stderr, "unknown preset '%s'\n", dump_preset.c_str());
          return 2;
        }
        std::printf("%s\n", it->second.c_str());
      } else {
        for (const auto& [name, text] : st3::cli::presets())
          std::printf("%s\n", name.c_str());
      }
      return 0;
    }
  } catch (const st3::Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", st3::error_kind_name(e.kind()),
                 e.what());
    return e.kind() == st3::ErrorKind::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
