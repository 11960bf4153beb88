#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "drrff/dataset.hpp"
#include "drrff/losses.hpp"
#include "drrff/models.hpp"

namespace drrff {

enum class Method { kDr, kMl, kAwgn, kFir };

std::string to_string(Method m);
Method parse_method(const std::string& name);

// Per-record augmentation of the awgn / fir baselines, applied before preprocessing.
struct AugmentConfig {
  bool enabled = true;
  double awgn_snr_min = 5.0;
  double awgn_snr_max = 30.0;
  int fir_taps = 5;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossConfig loss;
  Method method = Method::kDr;
  std::uint64_t seed = 0;
  int eval_every = 1;  // 0 disables held-out evaluation
  int qg_per_f = 1;    // Q/G steps per F step
  AugmentConfig augment;

  void validate() const;
};

class Adam {
 public:
  Adam(ParamList<float> params, double lr, double beta1, double beta2, double eps);
  // Applies one update from the accumulated gradients; parameters without a
  // gradient are left untouched. Gradients are cleared afterwards.
  void step();
  long steps() const { return t_; }

 private:
  ParamList<float> params_;
  std::vector<Tensor<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

// Values of one step, or epoch means of them. Q/G terms are NaN for baselines.
struct StepLosses {
  double L_F = kNotApplicable;
  double L_Q = kNotApplicable;
  double L_G = kNotApplicable;
  double L_v = kNotApplicable;
  double L_p = kNotApplicable;
  double L_G_signal = kNotApplicable;     // mse(x, x_hat) part of L_G
  double L_G_embedding = kNotApplicable;  // mse(F(x), F(x_hat)) part of L_G, before beta
};

struct EpochLosses : StepLosses {
  int epoch = 0;  // 1-based
};

struct EvalRecord {
  int epoch = 0;
  std::map<std::string, double> auc;  // split name -> AUC
};

// Networks, optimizers and histories. Holds pointers into itself, so it is
// neither copied nor moved.
struct TrainState {
  TrainState(const ModelConfig& model, const TrainConfig& cfg);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  Networks<float> nets;
  Adam fw_opt;
  Adam qg_opt;
  int epoch = 0;
  long global_step = 0;
  std::vector<EpochLosses> loss_history;
  std::vector<EvalRecord> eval_history;
  Method method = Method::kDr;
};

// Training records with class labels 0..K-1 assigned by ascending device id.
struct TrainData {
  std::vector<ComplexSignal> signals;
  std::vector<int> labels;
  std::vector<int> device_ids;  // class index -> device id
  Tensor<float> images;         // preprocessed raw records, (N, 2, 16, 80)

  int num_classes() const { return static_cast<int>(device_ids.size()); }
  std::size_t size() const { return labels.size(); }
};

TrainData make_train_data(const Dataset& ds);

struct Batch {
  std::vector<int> indices;
  std::vector<int> labels;
  Tensor<float> x;  // (B, 2, 16, 80)
};

// Shuffled minibatches of one epoch (deterministic in seed and epoch). A
// trailing batch smaller than 2 records is dropped.
std::vector<std::vector<int>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch);
Batch make_raw_batch(const TrainData& data, const std::vector<int>& indices);
// Baseline augmentation (awgn or fir) of the selected records, then preprocessing.
Batch make_augmented_batch(const TrainData& data, const std::vector<int>& indices, Method method,
                           const AugmentConfig& aug, Rng& rng);

// Permutation with no fixed points when one is found within a bounded number
// of redraws (always for n >= 2 in practice); identity for n < 2.
std::vector<int> background_permutation(int n, Rng& rng);

// Objectives for one minibatch; usable in double precision for gradient checks.
// Q/G objective: L_Q + L_G with self-pairs; F is evaluated with running statistics.
template <typename T>
Var<T> qg_objective(Networks<T>& nets, const Tensor<T>& x, std::span<const int> labels, const Tensor<T>& noise,
                    const LossConfig& loss, StepLosses* terms = nullptr);

// F objective: L_F on raw records and on detached augmentations G(F(x_i), Q(x_perm(i), n)).
// With lambda == 1 the augmentation is not computed.
template <typename T>
Var<T> f_objective(Networks<T>& nets, const Tensor<T>& x, std::span<const int> labels, std::span<const int> perm,
                   const Tensor<T>& noise, const LossConfig& loss, StepLosses* terms = nullptr);

// Updates Q and G only. Noise is drawn from rng.
StepLosses qg_step(TrainState& state, const Batch& batch, const TrainConfig& cfg, Rng& rng);
// Updates F and W only. Permutation and noise are drawn from rng.
StepLosses f_step(TrainState& state, const Batch& batch, const TrainConfig& cfg, Rng& rng);
// One maximum-likelihood update of F and W on already-augmented inputs.
StepLosses baseline_step(TrainState& state, const Batch& batch, const TrainConfig& cfg);

using EvalHook = std::function<std::map<std::string, double>(TrainState&)>;
using EpochHook = std::function<void(const TrainState&)>;

// Alternating Q/G and F steps per minibatch.
std::unique_ptr<TrainState> train_dr(const TrainData& data, const ModelConfig& model, const TrainConfig& cfg,
                                     const EvalHook& eval = {}, const EpochHook& on_epoch = {});
// F and W only, with the method's augmentation.
std::unique_ptr<TrainState> train_baseline(const TrainData& data, const ModelConfig& model, const TrainConfig& cfg,
                                           const EvalHook& eval = {}, const EpochHook& on_epoch = {});
// Dispatches on cfg.method.
std::unique_ptr<TrainState> train(const TrainData& data, const ModelConfig& model, const TrainConfig& cfg,
                                  const EvalHook& eval = {}, const EpochHook& on_epoch = {});

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json history_to_json(const TrainState& state);
// Writes <dir>/model.bin, <dir>/model.json and <dir>/history.json.
void write_training_outputs(const std::filesystem::path& dir, TrainState& state, const nlohmann::json& config,
                            std::uint64_t seed);

}  // namespace drrff
