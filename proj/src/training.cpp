#include "drrff/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "drrff/error.hpp"
#include "drrff/preprocessing.hpp"

namespace drrff {
namespace {

using json = nlohmann::json;

// Running mean of step losses; NaN terms stay NaN.
struct LossAccumulator {
  StepLosses sum{0, 0, 0, 0, 0, 0, 0};
  int count = 0;

  void add(const StepLosses& s) {
    sum.L_F += s.L_F;
    sum.L_Q += s.L_Q;
    sum.L_G += s.L_G;
    sum.L_v += s.L_v;
    sum.L_p += s.L_p;
    sum.L_G_signal += s.L_G_signal;
    sum.L_G_embedding += s.L_G_embedding;
    ++count;
  }
  EpochLosses mean(int epoch) const {
    EpochLosses e;
    e.epoch = epoch;
    if (count == 0) return e;
    e.L_F = sum.L_F / count;
    e.L_Q = sum.L_Q / count;
    e.L_G = sum.L_G / count;
    e.L_v = sum.L_v / count;
    e.L_p = sum.L_p / count;
    e.L_G_signal = sum.L_G_signal / count;
    e.L_G_embedding = sum.L_G_embedding / count;
    return e;
  }
};

// Overwrites NaN-free fields of `into` only with values present in `from`.
void merge(StepLosses& into, const StepLosses& from) {
  if (!std::isnan(from.L_F)) into.L_F = from.L_F;
  if (!std::isnan(from.L_Q)) into.L_Q = from.L_Q;
  if (!std::isnan(from.L_G)) into.L_G = from.L_G;
  if (!std::isnan(from.L_v)) into.L_v = from.L_v;
  if (!std::isnan(from.L_p)) into.L_p = from.L_p;
  if (!std::isnan(from.L_G_signal)) into.L_G_signal = from.L_G_signal;
  if (!std::isnan(from.L_G_embedding)) into.L_G_embedding = from.L_G_embedding;
}

json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

void check_batch(const Batch& batch) {
  if (batch.labels.empty()) throw ConfigError("empty batch");
  if (batch.x.rank() != 4 || batch.x.dim(0) != static_cast<int>(batch.labels.size())) {
    throw ShapeError("batch images " + to_string(batch.x.shape()) + " for " + std::to_string(batch.labels.size()) +
                     " labels");
  }
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kDr:
      return "dr";
    case Method::kMl:
      return "ml";
    case Method::kAwgn:
      return "awgn";
    case Method::kFir:
      return "fir";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "dr") return Method::kDr;
  if (name == "ml") return Method::kMl;
  if (name == "awgn") return Method::kAwgn;
  if (name == "fir") return Method::kFir;
  throw ConfigError("unknown training method '" + name + "' (expected dr, ml, awgn or fir)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam moment parameters must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (qg_per_f < 1) throw ConfigError("qg_per_f must be >= 1");
  if (augment.fir_taps < 1) throw ConfigError("augment.fir_taps must be >= 1");
  if (augment.awgn_snr_min > augment.awgn_snr_max) throw ConfigError("augment SNR range is empty");
  loss.validate();
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(ParamList<float> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_.params) {
    m_.emplace_back(p.var->shape());
    v_.emplace_back(p.var->shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.params.size(); ++i) {
    Var<float>& p = *params_.params[i].var;
    if (!p.has_grad()) continue;
    const float* g = p.grad().data();
    float* w = p.mutable_value().data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = static_cast<float>(beta1_ * m[k] + (1.0 - beta1_) * g[k]);
      v[k] = static_cast<float>(beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k]);
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] = static_cast<float>(w[k] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// State and data

TrainState::TrainState(const ModelConfig& model, const TrainConfig& cfg)
    : nets(model, Rng::derive(cfg.seed, "init")),
      fw_opt(nets.fw_params(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      qg_opt(nets.qg_params(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      method(cfg.method) {}

TrainData make_train_data(const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("training dataset is empty");
  TrainData data;
  const std::vector<int> ids = ds.device_ids();
  const std::set<int> unique(ids.begin(), ids.end());
  data.device_ids.assign(unique.begin(), unique.end());
  if (data.device_ids.size() < 2) throw ConfigError("training needs at least 2 devices");
  for (int id : ids) {
    const auto it = std::lower_bound(data.device_ids.begin(), data.device_ids.end(), id);
    data.labels.push_back(static_cast<int>(it - data.device_ids.begin()));
  }
  data.signals = ds.signals;
  data.images = make_batch(data.signals);
  return data;
}

std::vector<std::vector<int>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::derive(seed, "order", static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  return batches;
}

Batch make_raw_batch(const TrainData& data, const std::vector<int>& indices) {
  Batch b;
  b.indices = indices;
  constexpr std::size_t kPer = static_cast<std::size_t>(kImageChannels) * kImageRows * kImageCols;
  b.x = Tensor<float>(Shape{static_cast<int>(indices.size()), kImageChannels, kImageRows, kImageCols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    b.labels.push_back(data.labels.at(static_cast<std::size_t>(indices[i])));
    std::copy_n(data.images.data() + static_cast<std::size_t>(indices[i]) * kPer, kPer, b.x.data() + i * kPer);
  }
  return b;
}

Batch make_augmented_batch(const TrainData& data, const std::vector<int>& indices, Method method,
                           const AugmentConfig& aug, Rng& rng) {
  if (!aug.enabled || method == Method::kMl || method == Method::kDr) return make_raw_batch(data, indices);
  std::vector<ComplexSignal> augmented;
  Batch b;
  b.indices = indices;
  for (int idx : indices) {
    const ComplexSignal& s = data.signals.at(static_cast<std::size_t>(idx));
    b.labels.push_back(data.labels[static_cast<std::size_t>(idx)]);
    if (method == Method::kAwgn) {
      augmented.push_back(add_awgn(s, rng.uniform(aug.awgn_snr_min, aug.awgn_snr_max), rng));
    } else {
      std::vector<std::complex<double>> taps(static_cast<std::size_t>(aug.fir_taps));
      double power = 0.0;
      for (auto& t : taps) {
        t = rng.complex_normal(1.0);
        power += std::norm(t);
      }
      for (auto& t : taps) t /= std::sqrt(power);
      augmented.push_back(apply_fir(s, taps));
    }
  }
  b.x = make_batch(augmented);
  return b;
}

std::vector<int> background_permutation(int n, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(std::max(n, 0)));
  std::iota(perm.begin(), perm.end(), 0);
  if (n < 2) return perm;
  std::vector<int> candidate = perm;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::iota(candidate.begin(), candidate.end(), 0);
    rng.shuffle(candidate.begin(), candidate.end());
    bool fixed = false;
    for (int i = 0; i < n; ++i) fixed = fixed || candidate[static_cast<std::size_t>(i)] == i;
    if (!fixed) return candidate;
  }
  return candidate;
}

// ---------------------------------------------------------------------------
// Objectives

template <typename T>
Var<T> qg_objective(Networks<T>& nets, const Tensor<T>& x, std::span<const int> labels, const Tensor<T>& noise,
                    const LossConfig& loss, StepLosses* terms) {
  const T delta = static_cast<T>(loss.delta);
  const Var<T> xv = Var<T>::constant(x);
  const Var<T> background = nets.Q.forward(xv, noise, NormMode::kBatchUpdate);
  const Var<T> z = nets.F.forward(xv, NormMode::kRunning).detach();

  const Var<T> lv = loss_v(xv, background);
  const Var<T> p_bg = nets.W.probabilities(nets.F.forward(background, NormMode::kRunning), delta);
  const Var<T> lp = loss_p(p_bg, labels, static_cast<T>(loss.epsilon));
  const Var<T> lq = loss_Q(lv, lp, static_cast<T>(loss.alpha));

  const Var<T> x_hat = nets.G.forward(background, z, NormMode::kBatchUpdate);
  const Var<T> z_hat = nets.F.forward(x_hat, NormMode::kRunning);
  const Var<T> lg = loss_G(xv, x_hat, z, z_hat, static_cast<T>(loss.beta));
  if (terms) {
    terms->L_G_signal = ops::mse(xv, x_hat).value().item();
    terms->L_G_embedding = ops::mse(z, z_hat).value().item();
  }

  if (terms) {
    terms->L_v = lv.value().item();
    terms->L_p = lp.value().item();
    terms->L_Q = lq.value().item();
    terms->L_G = lg.value().item();
  }
  return ops::add(lq, lg);
}

template <typename T>
Var<T> f_objective(Networks<T>& nets, const Tensor<T>& x, std::span<const int> labels, std::span<const int> perm,
                   const Tensor<T>& noise, const LossConfig& loss, StepLosses* terms) {
  const T delta = static_cast<T>(loss.delta);
  const T lambda = static_cast<T>(loss.lambda);
  const Var<T> xv = Var<T>::constant(x);
  const Var<T> z_raw = nets.F.forward(xv, NormMode::kBatchUpdate);
  const Var<T> p_raw = nets.W.probabilities(z_raw, delta);
  Var<T> p_aug;
  if (lambda != T(1)) {
    const Var<T> background = nets.Q.forward(xv, noise, NormMode::kRunning);
    const Var<T> shuffled = ops::index_select(background, perm);
    const Var<T> x_hat = nets.G.forward(shuffled, z_raw.detach(), NormMode::kRunning).detach();
    p_aug = nets.W.probabilities(nets.F.forward(x_hat, NormMode::kBatchUpdate), delta);
  }
  Var<T> lf = loss_F(p_raw, p_aug, labels, lambda);
  if (terms) terms->L_F = lf.value().item();
  return lf;
}

// ---------------------------------------------------------------------------
// Steps

StepLosses qg_step(TrainState& state, const Batch& batch, const TrainConfig& cfg, Rng& rng) {
  check_batch(batch);
  const ParamList<float> fw = state.nets.fw_params();
  const ParamList<float> qg = state.nets.qg_params();
  fw.set_requires_grad(false);
  qg.set_requires_grad(true);
  StepLosses terms;
  const Tensor<float> noise = state.nets.Q.sample_noise(batch.x.dim(0), rng);
  qg_objective(state.nets, batch.x, batch.labels, noise, cfg.loss, &terms).backward();
  state.qg_opt.step();
  fw.set_requires_grad(true);
  return terms;
}

StepLosses f_step(TrainState& state, const Batch& batch, const TrainConfig& cfg, Rng& rng) {
  check_batch(batch);
  const int n = batch.x.dim(0);
  LossConfig loss = cfg.loss;
  if (n < 2 && loss.lambda != 1.0) {
    std::cerr << "warning: batch of 1 cannot shuffle backgrounds; using the raw term only\n";
    loss.lambda = 1.0;
  }
  const ParamList<float> fw = state.nets.fw_params();
  const ParamList<float> qg = state.nets.qg_params();
  qg.set_requires_grad(false);
  fw.set_requires_grad(true);
  StepLosses terms;
  const std::vector<int> perm = background_permutation(n, rng);
  const Tensor<float> noise = state.nets.Q.sample_noise(n, rng);
  f_objective(state.nets, batch.x, batch.labels, perm, noise, loss, &terms).backward();
  state.fw_opt.step();
  qg.set_requires_grad(true);
  return terms;
}

StepLosses baseline_step(TrainState& state, const Batch& batch, const TrainConfig& cfg) {
  check_batch(batch);
  const ParamList<float> fw = state.nets.fw_params();
  const ParamList<float> qg = state.nets.qg_params();
  qg.set_requires_grad(false);
  fw.set_requires_grad(true);
  const Var<float> z = state.nets.F.forward(Var<float>::constant(batch.x), NormMode::kBatchUpdate);
  const Var<float> p = state.nets.W.probabilities(z, static_cast<float>(cfg.loss.delta));
  Var<float> lf = loss_F(p, Var<float>(), batch.labels, 1.0f);
  StepLosses terms;
  terms.L_F = lf.value().item();
  lf.backward();
  state.fw_opt.step();
  qg.set_requires_grad(true);
  return terms;
}

// ---------------------------------------------------------------------------
// Loops

namespace {

std::unique_ptr<TrainState> run_training(const TrainData& data, const ModelConfig& model, const TrainConfig& cfg,
                                         const EvalHook& eval, const EpochHook& on_epoch) {
  cfg.validate();
  if (data.num_classes() != model.num_classes) {
    throw ConfigError("model has " + std::to_string(model.num_classes) + " classes but the data has " +
                      std::to_string(data.num_classes()) + " devices");
  }
  auto state = std::make_unique<TrainState>(model, cfg);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossAccumulator acc;
    for (const auto& indices : epoch_batches(data.size(), cfg.batch_size, cfg.seed, epoch)) {
      const auto step = static_cast<std::uint64_t>(state->global_step++);
      StepLosses losses;
      if (cfg.method == Method::kDr) {
        const Batch batch = make_raw_batch(data, indices);
        for (int r = 0; r < cfg.qg_per_f; ++r) {
          Rng qrng(Rng::derive(cfg.seed, "qg-step", step * static_cast<std::uint64_t>(cfg.qg_per_f) + r));
          merge(losses, qg_step(*state, batch, cfg, qrng));
        }
        Rng frng(Rng::derive(cfg.seed, "f-step", step));
        merge(losses, f_step(*state, batch, cfg, frng));
      } else {
        Rng arng(Rng::derive(cfg.seed, "augment", step));
        const Batch batch = make_augmented_batch(data, indices, cfg.method, cfg.augment, arng);
        merge(losses, baseline_step(*state, batch, cfg));
      }
      acc.add(losses);
    }
    state->epoch = epoch;
    state->loss_history.push_back(acc.mean(epoch));
    if (eval && cfg.eval_every > 0 && epoch % cfg.eval_every == 0) {
      state->eval_history.push_back({epoch, eval(*state)});
    }
    if (on_epoch) on_epoch(*state);
  }
  return state;
}

}  // namespace

std::unique_ptr<TrainState> train_dr(const TrainData& data, const ModelConfig& model, const TrainConfig& cfg,
                                     const EvalHook& eval, const EpochHook& on_epoch) {
  if (cfg.method != Method::kDr) throw ConfigError("train_dr requires method dr");
  return run_training(data, model, cfg, eval, on_epoch);
}

std::unique_ptr<TrainState> train_baseline(const TrainData& data, const ModelConfig& model, const TrainConfig& cfg,
                                           const EvalHook& eval, const EpochHook& on_epoch) {
  if (cfg.method == Method::kDr) throw ConfigError("train_baseline requires method ml, awgn or fir");
  return run_training(data, model, cfg, eval, on_epoch);
}

std::unique_ptr<TrainState> train(const TrainData& data, const ModelConfig& model, const TrainConfig& cfg,
                                  const EvalHook& eval, const EpochHook& on_epoch) {
  return run_training(data, model, cfg, eval, on_epoch);
}

// ---------------------------------------------------------------------------
// Serialization

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"learning_rate", cfg.learning_rate},
              {"adam_beta1", cfg.adam_beta1},
              {"adam_beta2", cfg.adam_beta2},
              {"adam_eps", cfg.adam_eps},
              {"method", to_string(cfg.method)},
              {"seed", cfg.seed},
              {"eval_every", cfg.eval_every},
              {"qg_per_f", cfg.qg_per_f},
              {"augment",
               {{"enabled", cfg.augment.enabled},
                {"awgn_snr_min", cfg.augment.awgn_snr_min},
                {"awgn_snr_max", cfg.augment.awgn_snr_max},
                {"fir_taps", cfg.augment.fir_taps}}},
              {"loss",
               {{"lambda", cfg.loss.lambda},
                {"alpha", cfg.loss.alpha},
                {"beta", cfg.loss.beta},
                {"epsilon", cfg.loss.epsilon},
                {"delta", cfg.loss.delta}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
    cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.method = parse_method(j.value("method", to_string(cfg.method)));
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.qg_per_f = j.value("qg_per_f", cfg.qg_per_f);
    if (j.contains("augment")) {
      const json& a = j.at("augment");
      cfg.augment.enabled = a.value("enabled", cfg.augment.enabled);
      cfg.augment.awgn_snr_min = a.value("awgn_snr_min", cfg.augment.awgn_snr_min);
      cfg.augment.awgn_snr_max = a.value("awgn_snr_max", cfg.augment.awgn_snr_max);
      cfg.augment.fir_taps = a.value("fir_taps", cfg.augment.fir_taps);
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      cfg.loss.lambda = l.value("lambda", cfg.loss.lambda);
      cfg.loss.alpha = l.value("alpha", cfg.loss.alpha);
      cfg.loss.beta = l.value("beta", cfg.loss.beta);
      cfg.loss.epsilon = l.value("epsilon", cfg.loss.epsilon);
      cfg.loss.delta = l.value("delta", cfg.loss.delta);
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("train config: ") + ex.what());
  }
  return cfg;
}

json history_to_json(const TrainState& state) {
  json losses = json::array();
  for (const auto& e : state.loss_history) {
    losses.push_back({{"epoch", e.epoch},
                      {"L_F", nan_to_null(e.L_F)},
                      {"L_Q", nan_to_null(e.L_Q)},
                      {"L_G", nan_to_null(e.L_G)},
                      {"L_v", nan_to_null(e.L_v)},
                      {"L_p", nan_to_null(e.L_p)},
                      {"L_G_signal", nan_to_null(e.L_G_signal)},
                      {"L_G_embedding", nan_to_null(e.L_G_embedding)}});
  }
  json evals = json::array();
  for (const auto& r : state.eval_history) evals.push_back({{"epoch", r.epoch}, {"auc", r.auc}});
  return json{{"method", to_string(state.method)}, {"loss_history", losses}, {"eval_history", evals}};
}

void write_training_outputs(const std::filesystem::path& dir, TrainState& state, const json& config,
                            std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const json history = history_to_json(state);
  CheckpointMeta meta;
  meta.config = config;
  meta.epoch = state.epoch;
  meta.seed = seed;
  meta.loss_history = history.at("loss_history");
  // Baselines never touch Q and G, so only F and W are stored for them.
  save_checkpoint(dir / "model", state.method == Method::kDr ? state.nets.all_params() : state.nets.fw_params(), meta);
  std::ofstream f(dir / "history.json");
  if (!f) throw IoError("cannot write " + (dir / "history.json").string());
  f << history.dump(2) << '\n';
}

template Var<float> qg_objective(Networks<float>&, const Tensor<float>&, std::span<const int>, const Tensor<float>&,
                                 const LossConfig&, StepLosses*);
template Var<double> qg_objective(Networks<double>&, const Tensor<double>&, std::span<const int>,
                                  const Tensor<double>&, const LossConfig&, StepLosses*);
template Var<float> f_objective(Networks<float>&, const Tensor<float>&, std::span<const int>, std::span<const int>,
                                const Tensor<float>&, const LossConfig&, StepLosses*);
template Var<double> f_objective(Networks<double>&, const Tensor<double>&, std::span<const int>,
                                 std::span<const int>, const Tensor<double>&, const LossConfig&, StepLosses*);

}  // namespace drrff
