// bam: a training laboratory for two-stage group-robust learning on
// synthetic spurious-correlation datasets.
//
// Subcommands:
//   gen-data  generate a dataset directory (train/validation/test CSVs)
//   train     run the two-stage pipeline on a dataset directory
//   sweep     run a Cartesian grid of configurations
//   analyze   post-process finished runs
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

#include <exception>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bam/bam.hpp"

namespace {

int dispatch(const std::string& name, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const bam::ConfigError& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training laboratory for two-stage group-robust learning"};
  app.require_subcommand(1);

  bam::GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  gen->add_option("--config", gen_args.config_path, "Experiment config file")->required();
  gen->add_option("--out", gen_args.out_dir, "Output directory")->required();
  gen->add_flag("--force", gen_args.force, "Overwrite existing outputs");

  bam::TrainArgs train_args;
  std::string mode_flag, criterion_flag;
  CLI::App* train = app.add_subcommand("train", "Run the two-stage pipeline");
  train->add_option("--config", train_args.config_path, "Experiment config file")->required();
  train->add_option("--data", train_args.data_dir, "Dataset directory from gen-data")->required();
  train->add_option("--out", train_args.out_dir, "Run output directory")->required();
  train->add_flag("--force", train_args.force, "Overwrite a non-empty output directory");
  train->add_option("--mode", mode_flag, "Override mode: one-m or two-m");
  train->add_option("--criterion", criterion_flag,
                    "Override stopping criterion: worst-group-val or class-diff");

  bam::SweepArgs sweep_args;
  CLI::App* sweep = app.add_subcommand("sweep", "Run a grid of configurations");
  sweep->add_option("--config", sweep_args.sweep_path, "Sweep spec file")->required();
  sweep->add_option("--data", sweep_args.data_dir, "Dataset directory from gen-data")->required();
  sweep->add_option("--out", sweep_args.out_dir, "Sweep output directory")->required();
  sweep->add_flag("--force", sweep_args.force, "Re-run points that already have a summary");
  sweep->add_option("--jobs", sweep_args.jobs, "Worker threads")->check(CLI::PositiveNumber);

  bam::AnalyzeArgs analyze_args;
  CLI::App* analyze = app.add_subcommand("analyze", "Post-process finished runs");
  analyze->add_option("kind", analyze_args.kind, "Analysis kind: classdiff, aux, or ablation")
      ->required();
  analyze->add_option("--run", analyze_args.run_dirs, "Run directory (repeatable)")
      ->required()
      ->take_all();
  analyze->add_option("--out", analyze_args.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (gen->parsed()) return dispatch("gen-data", [&] { bam::cmd_gen_data(gen_args); });
  if (train->parsed()) {
    return dispatch("train", [&] {
      if (!mode_flag.empty()) train_args.mode_override = bam::mode_from_string(mode_flag);
      if (!criterion_flag.empty())
        train_args.criterion_override = bam::criterion_from_string(criterion_flag);
      bam::cmd_train(train_args);
    });
  }
  if (sweep->parsed()) return dispatch("sweep", [&] { bam::cmd_sweep(sweep_args); });
  if (analyze->parsed()) return dispatch("analyze", [&] { bam::cmd_analyze(analyze_args); });
  return 1;
}
