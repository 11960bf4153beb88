#include "drrff/commands.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>

#include "drrff/error.hpp"
#include "drrff/evaluation.hpp"
#include "drrff/experiment.hpp"
#include "drrff/visualization.hpp"

namespace drrff {
namespace {

using json = nlohmann::json;

std::string fmt(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_epoch(const TrainState& s, int total) {
  const EpochLosses& e = s.loss_history.back();
  std::cerr << "epoch " << e.epoch << "/" << total << "  L_F " << fmt(e.L_F) << "  L_v " << fmt(e.L_v) << "  L_p "
            << fmt(e.L_p) << "  L_G " << fmt(e.L_G);
  if (!s.eval_history.empty() && s.eval_history.back().epoch == e.epoch) {
    for (const auto& [split, auc] : s.eval_history.back().auc) std::cerr << "  auc[" << split << "] " << fmt(auc);
  }
  std::cerr << '\n';
}

// Trained networks with the model section of the checkpoint's config.
struct LoadedModel {
  CheckpointMeta meta;
  std::unique_ptr<Networks<float>> nets;
};

LoadedModel load_model(const std::filesystem::path& ckpt, bool need_qg) {
  const auto stem = checkpoint_stem(ckpt);
  LoadedModel m;
  m.meta = read_checkpoint_meta(stem);
  if (!m.meta.config.contains("model")) throw ConfigError("checkpoint config has no model section");
  const ModelConfig model = model_config_from_json(m.meta.config.at("model"));
  m.nets = std::make_unique<Networks<float>>(model, 0);
  if (need_qg) {
    const auto groups = checkpoint_groups(stem);
    if (std::find(groups.begin(), groups.end(), "Q") == groups.end()) {
      throw ConfigError("checkpoint " + stem.string() + " has no Q/G networks (not a dr run)");
    }
    load_checkpoint(stem, m.nets->all_params());
  } else {
    load_checkpoint(stem, m.nets->fw_params(), /*allow_extra=*/true);
  }
  return m;
}

}  // namespace

std::filesystem::path checkpoint_stem(const std::filesystem::path& p) {
  if (std::filesystem::is_directory(p)) return p / "model";
  const auto ext = p.extension();
  if (ext == ".bin" || ext == ".json") return p.parent_path() / p.stem();
  return p;
}

void cmd_gen_data(const GenDataArgs& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  const ExperimentConfig cfg = load_experiment(a.config, a.overrides);
  gen_dataset(cfg.dataset, a.seed, a.out);
  json effective = experiment_to_json(cfg);
  write_run_metadata(a.out, "gen-data", a.seed, effective);
}

void cmd_train(const TrainArgs& a) {
  if (a.out.empty() || a.data.empty()) throw ConfigError("--data and --out are required");
  std::vector<std::string> overrides = a.overrides;
  overrides.push_back("train.method=\"" + a.method + "\"");
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));
  ExperimentConfig cfg = load_experiment(a.config, overrides);

  const Dataset train_ds = read_dataset(a.data / "train");
  const TrainData data = make_train_data(train_ds);
  cfg.model.num_classes = data.num_classes();

  std::map<std::string, Dataset> eval_sets;
  if (cfg.train.eval_every > 0) {
    for (const auto& name : cfg.eval_splits) {
      if (std::filesystem::exists(a.data / name)) {
        eval_sets.emplace(name, read_dataset(a.data / name));
      } else {
        std::cerr << "warning: eval split '" << name << "' not found under " << a.data.string() << ", skipped\n";
      }
    }
  }
  EvalHook eval;
  if (!eval_sets.empty()) {
    eval = [&eval_sets](TrainState& s) {
      std::map<std::string, double> auc;
      for (const auto& [name, ds] : eval_sets) auc[name] = evaluate_split(s.nets.F, ds).auc;
      return auc;
    };
  }
  EpochHook on_epoch;
  if (a.verbose) on_epoch = [&cfg](const TrainState& s) { print_epoch(s, cfg.train.epochs); };

  const auto state = train(data, cfg.model, cfg.train, eval, on_epoch);
  const json effective = experiment_to_json(cfg);
  write_training_outputs(a.out, *state, effective, cfg.train.seed);
  write_run_metadata(a.out, "train", cfg.train.seed, effective);
}

void cmd_eval(const EvalArgs& a) {
  if (a.out.empty() || a.data.empty() || a.ckpt.empty()) throw ConfigError("--ckpt, --data and --out are required");
  LoadedModel m = load_model(a.ckpt, false);
  const Dataset ds = read_dataset(a.data);
  const SplitMetrics metrics = evaluate_split(m.nets->F, ds);
  write_metrics(a.out, metrics);
  write_run_metadata(a.out, "eval", m.meta.seed,
                     json{{"checkpoint", checkpoint_stem(a.ckpt).string()},
                          {"data", a.data.string()},
                          {"split", ds.name},
                          {"experiment", m.meta.config}});
}

void cmd_viz(const VizArgs& a) {
  if (a.out.empty() || a.data.empty() || a.ckpt.empty()) throw ConfigError("--ckpt, --data and --out are required");
  if (a.channel != "real" && a.channel != "imag") throw ConfigError("--channel must be real or imag");
  LoadedModel m = load_model(a.ckpt, true);
  const Dataset ds = read_dataset(a.data);
  VizOptions opt;
  opt.channel = a.channel == "real" ? 0 : 1;
  opt.seed = a.seed;
  const std::string name =
      a.name.empty() ? "pair_" + std::to_string(a.record_1) + "_" + std::to_string(a.record_2) : a.name;
  const VizGrid g = render_disentanglement(*m.nets, ds, a.record_1, a.record_2, opt, a.out / "viz", name);
  if (g.same_record) std::cerr << "note: both panels show the same record\n";
  write_run_metadata(a.out, "viz", a.seed,
                     json{{"checkpoint", checkpoint_stem(a.ckpt).string()},
                          {"data", a.data.string()},
                          {"record_1", a.record_1},
                          {"record_2", a.record_2},
                          {"channel", a.channel},
                          {"name", name},
                          {"experiment", m.meta.config}});
}

void cmd_sweep(const SweepArgs& a) {
  if (a.out.empty() || a.data.empty()) throw ConfigError("--data and --out are required");
  if (a.values.empty()) throw ConfigError("--values needs at least one number");
  std::vector<std::string> overrides = a.overrides;
  overrides.push_back("train.method=\"dr\"");
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));
  ExperimentConfig cfg = load_experiment(a.config, overrides);
  const TrainData data = make_train_data(read_dataset(a.data / "train"));
  cfg.model.num_classes = data.num_classes();
  const Dataset eval_ds = read_dataset(a.data / a.eval_split);
  TrainConfig base = cfg.train;
  base.eval_every = 0;
  const auto rows = sweep(a.param, a.values, a.repeats, data, cfg.model, base, eval_ds);
  std::filesystem::create_directories(a.out);
  write_sweep_csv(a.out / "sweep.csv", rows);
  write_run_metadata(a.out, "sweep", cfg.train.seed,
                     json{{"param", a.param},
                          {"values", a.values},
                          {"repeats", a.repeats},
                          {"eval_split", a.eval_split},
                          {"experiment", experiment_to_json(cfg)}});
}

void cmd_curves(const CurvesArgs& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  if (a.histories.empty()) throw ConfigError("at least one --history file is required");
  render_learning_curves(a.histories, a.out);
  json files = json::array();
  for (const auto& h : a.histories) files.push_back(h.string());
  write_run_metadata(a.out, "curves", 0, json{{"histories", files}});
}

int run_command(const std::function<void()>& fn) {
  try {
    fn();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace drrff
