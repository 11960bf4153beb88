// Command-line entry point: gen-data, train, eval, viz, sweep, curves.

#include <iostream>

#include "CLI11.hpp"

#include "drrff/commands.hpp"
#include "drrff/experiment.hpp"

namespace {

void add_config_flags(CLI::App* cmd, std::optional<std::filesystem::path>& config,
                      std::vector<std::string>& overrides) {
  cmd->add_option("--config", config, "Experiment config (JSON); defaults are used for missing keys")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", overrides, "Override a config value, e.g. --set train.epochs=5 (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled radio fingerprint extraction: data generation, training and evaluation"};
  app.set_version_flag("--version", drrff::build_version());
  app.require_subcommand(1);

  drrff::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic train / val / test splits");
  add_config_flags(gen_cmd, gen.config, gen.overrides);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();

  drrff::TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_config_flags(train_cmd, tr.config, tr.overrides);
  train_cmd->add_option("--method", tr.method, "Training method")
      ->check(CLI::IsMember({"dr", "ml", "awgn", "fir"}))
      ->capture_default_str();
  train_cmd->add_option("--data", tr.data, "Dataset root written by gen-data")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--seed", tr.seed, "Training seed (replaces train.seed)");
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "Do not print per-epoch progress");

  drrff::EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a split with a trained extractor");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Run directory or checkpoint stem")->required();
  eval_cmd->add_option("--data", ev.data, "Split directory")->required();
  eval_cmd->add_option("--out", ev.out, "Output directory for metrics.json and roc.csv")->required();

  drrff::VizArgs viz;
  auto* viz_cmd = app.add_subcommand("viz", "Render raw / background / synthetic / difference panels");
  viz_cmd->add_option("--ckpt", viz.ckpt, "Run directory or checkpoint stem of a dr run")->required();
  viz_cmd->add_option("--data", viz.data, "Split directory")->required();
  viz_cmd->add_option("--out", viz.out, "Output directory (files go to <out>/viz)")->required();
  viz_cmd->add_option("--i", viz.record_1, "First record index")->capture_default_str();
  viz_cmd->add_option("--j", viz.record_2, "Second record index")->capture_default_str();
  viz_cmd->add_option("--seed", viz.seed, "Background noise seed")->capture_default_str();
  viz_cmd->add_option("--channel", viz.channel, "Displayed channel")
      ->check(CLI::IsMember({"real", "imag"}))
      ->capture_default_str();
  viz_cmd->add_option("--name", viz.name, "File name stem (default pair_<i>_<j>)");

  drrff::SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train dr models over a range of one loss weight");
  add_config_flags(sweep_cmd, sw.config, sw.overrides);
  sweep_cmd->add_option("--data", sw.data, "Dataset root written by gen-data")->required();
  sweep_cmd->add_option("--out", sw.out, "Output directory for sweep.csv")->required();
  sweep_cmd->add_option("--param", sw.param, "Swept weight")
      ->check(CLI::IsMember({"lambda", "alpha", "beta"}))
      ->capture_default_str();
  sweep_cmd->add_option("--values", sw.values, "Comma-separated values")->delimiter(',')->required();
  sweep_cmd->add_option("--repeats", sw.repeats, "Seeds per value")->check(CLI::PositiveNumber)->capture_default_str();
  sweep_cmd->add_option("--eval-split", sw.eval_split, "Split scored for each model")->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seed, "Base training seed");

  drrff::CurvesArgs cu;
  auto* curves_cmd = app.add_subcommand("curves", "Average per-epoch AUC over history files");
  curves_cmd->add_option("--history", cu.histories, "history.json files (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  curves_cmd->add_option("--out", cu.out, "Output directory for curves.csv and curves.png")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? drrff::kExitOk : drrff::kExitUsage;
  }

  tr.verbose = !quiet;
  if (gen_cmd->parsed()) return drrff::run_command([&] { drrff::cmd_gen_data(gen); });
  if (train_cmd->parsed()) return drrff::run_command([&] { drrff::cmd_train(tr); });
  if (eval_cmd->parsed()) return drrff::run_command([&] { drrff::cmd_eval(ev); });
  if (viz_cmd->parsed()) return drrff::run_command([&] { drrff::cmd_viz(viz); });
  if (sweep_cmd->parsed()) return drrff::run_command([&] { drrff::cmd_sweep(sw); });
  return drrff::run_command([&] { drrff::cmd_curves(cu); });
}
