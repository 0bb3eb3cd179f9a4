// SPDX-License-Identifier: Apache-2.0
//
// mtwb — massive-MIMO transformer workbench CLI.
//
// Subcommands: gen-data, ce-train, ce-eval, csi-train, csi-eval, hbf-train,
// hbf-eval, sweep, compare. A JSON config (--config) layered on a named
// preset (--preset desk|paper-full) drives everything; --seed and --out
// override the config.
#include <CLI11.hpp>
#include <iostream>

#include "mtwb/harness.hpp"

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string preset = "desk";
  std::string out;
  std::uint64_t seed = 0;
  bool has_seed = false;
};

mtwb::ExperimentConfig resolve_config(const GlobalOpts& g, const std::string& pipeline) {
  mtwb::ExperimentConfig cfg;
  if (!g.config_path.empty()) {
    cfg = mtwb::ExperimentConfig::load(g.config_path);
    if (!pipeline.empty()) cfg.pipeline = pipeline;
  } else {
    cfg = mtwb::ExperimentConfig::preset_config(g.preset, pipeline.empty() ? "ce" : pipeline);
  }
  if (g.has_seed) cfg.seed = g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  cfg.validate();
  return cfg;
}

void add_globals(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config_path, "JSON experiment config");
  cmd->add_option("--preset", g.preset, "named preset when no config is given")
      ->check(CLI::IsMember({"desk", "paper-full"}));
  cmd->add_option("--out", g.out, "output directory override");
  cmd->add_option("--seed", g.seed, "seed override")->each([&](const std::string&) {
    g.has_seed = true;
  });
}

void print_records(const std::vector<mtwb::ResultRecord>& records) {
  for (const auto& r : records) {
    std::cout << r.scheme << " @ " << r.coordinate << ": " << r.metric << " = " << r.value << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"massive-MIMO transformer workbench"};
  app.require_subcommand(1);

  GlobalOpts g_gen, g_train, g_eval, g_sweep;
  std::string train_pipeline, eval_pipeline;
  std::string eval_checkpoint;
  std::string sweep_axis = "feedback_bits";
  std::vector<double> sweep_values;
  std::vector<std::string> compare_files;
  std::string rerun_manifest, rerun_out;

  auto* gen = app.add_subcommand("gen-data", "generate train/val/test datasets");
  add_globals(gen, g_gen);

  auto make_train_cmd = [&](const std::string& name, const std::string& pipeline) {
    auto* cmd = app.add_subcommand(name + "-train", "train the " + pipeline + " pipeline");
    add_globals(cmd, g_train);
    cmd->callback([&, pipeline] {
      auto cfg = resolve_config(g_train, pipeline);
      const auto checkpoint = mtwb::train_stage(cfg);
      std::cout << "checkpoint: " << checkpoint.string() << "\n";
    });
    return cmd;
  };
  auto make_eval_cmd = [&](const std::string& name, const std::string& pipeline) {
    auto* cmd = app.add_subcommand(name + "-eval", "evaluate a trained " + pipeline + " checkpoint");
    add_globals(cmd, g_eval);
    cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint (default <out>/model.mtwb)");
    cmd->callback([&, pipeline] {
      auto cfg = resolve_config(g_eval, pipeline);
      const std::filesystem::path ckpt =
          eval_checkpoint.empty() ? cfg.out / "model.mtwb" : std::filesystem::path(eval_checkpoint);
      const auto records = mtwb::eval_stage(cfg, ckpt);
      const auto csv = cfg.out / "results.csv";
      mtwb::write_results_csv(csv, records);
      print_records(records);
      std::cout << "results: " << csv.string() << "\n";
    });
    return cmd;
  };
  make_train_cmd("ce", "ce");
  make_eval_cmd("ce", "ce");
  make_train_cmd("csi", "csi");
  make_eval_cmd("csi", "csi");
  make_train_cmd("hbf", "hbf");
  make_eval_cmd("hbf", "hbf");

  gen->callback([&] {
    auto cfg = resolve_config(g_gen, "");
    const auto paths = mtwb::ensure_datasets(cfg);
    std::cout << "train: " << paths.train.string() << "\nval:   " << paths.val.string()
              << "\ntest:  " << paths.test.string() << "\n";
  });

  auto* sw = app.add_subcommand("sweep", "run or evaluate across an axis and merge results");
  add_globals(sw, g_sweep);
  sw->add_option("--axis", sweep_axis, "snr_db | feedback_bits")
      ->check(CLI::IsMember({"snr_db", "feedback_bits"}));
  sw->add_option("--values", sweep_values, "axis values")->required();
  sw->callback([&] {
    auto cfg = resolve_config(g_sweep, "");
    const auto out = mtwb::sweep(cfg, sweep_axis, sweep_values);
    print_records(out.records);
    std::cout << "results: " << out.results_csv.string() << "\n";
  });

  auto* cmp = app.add_subcommand("compare", "rank schemes per coordinate and report crossovers");
  cmp->add_option("files", compare_files, "results CSV files")->required()->expected(-1);
  cmp->callback([&] {
    std::vector<std::filesystem::path> files(compare_files.begin(), compare_files.end());
    std::cout << mtwb::compare_results(files).table;
  });

  auto* rerun = app.add_subcommand("rerun", "re-execute a run from its manifest");
  rerun->add_option("manifest", rerun_manifest, "manifest.json of a prior run")->required();
  rerun->add_option("--out", rerun_out, "new output directory")->required();
  rerun->callback([&] {
    const auto out = mtwb::run_from_manifest(rerun_manifest, rerun_out);
    print_records(out.records);
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
