#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "drrff/ops.hpp"
#include "drrff/rng.hpp"

namespace drrff {

using ops::NormMode;

template <typename T>
struct NamedParam {
  std::string name;
  Var<T>* var;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

// Flat view of a network's trainable parameters and persistent buffers.
template <typename T>
struct ParamList {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBuffer<T>> buffers;

  void append(const ParamList& other) {
    params.insert(params.end(), other.params.begin(), other.params.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }
  std::size_t num_scalars() const;
  void set_requires_grad(bool flag) const;
  void zero_grad() const;
};

// FNV-1a over the raw bytes of every parameter (and buffer, if asked).
template <typename T>
std::uint64_t param_hash(const ParamList<T>& list, bool include_buffers = false);

// Deep copy of parameter values and buffers, in collection order.
template <typename T>
std::vector<Tensor<T>> snapshot(const ParamList<T>& list);
template <typename T>
void restore(const ParamList<T>& list, const std::vector<Tensor<T>>& values);

// ---------------------------------------------------------------------------
// Layers

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, Rng& rng);
  Var<T> forward(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out);
  int out_channels() const { return weight_.shape()[0]; }

 private:
  Var<T> weight_, bias_;
  int stride_ = 1, pad_ = 0;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels);
  Var<T> forward(const Var<T>& x, NormMode mode);
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  Var<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, bool bias, Rng& rng);
  Var<T> forward(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  Var<T> weight_, bias_;
};

// 3x3 conv (no bias) -> batch norm -> leaky ReLU (slope 0 gives ReLU).
template <typename T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(int in_ch, int out_ch, int stride, double slope, Rng& rng);
  Var<T> forward(const Var<T>& x, NormMode mode);
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  Conv2d<T> conv_;
  BatchNorm<T> bn_;
  T slope_ = T(0);
};

// Two ConvBnAct blocks; preserves H x W.
template <typename T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(int in_ch, int out_ch, Rng& rng);
  Var<T> forward(const Var<T>& x, NormMode mode);
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  ConvBnAct<T> a_, b_;
};

// 2x2 max pool then DoubleConv; halves H x W, odd sizes are a ConfigError.
template <typename T>
class DownConv {
 public:
  DownConv() = default;
  DownConv(int in_ch, int out_ch, Rng& rng);
  Var<T> forward(const Var<T>& x, NormMode mode);
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  DoubleConv<T> conv_;
};

// Nearest 2x upsampling then DoubleConv; doubles H x W.
template <typename T>
class UpConv {
 public:
  UpConv() = default;
  UpConv(int in_ch, int out_ch, Rng& rng);
  Var<T> forward(const Var<T>& x, NormMode mode);
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  DoubleConv<T> conv_;
};

// ---------------------------------------------------------------------------
// Networks

struct ExtractorConfig {
  int num_layers = 18;
  int embedding_dim = 128;
  int base_width = 32;
  int max_width = 256;
  double leaky_slope = 0.2;
  int in_channels = 2;
  int height = 16;
  int width = 80;
};

// Stage s runs at input size / 2^s; the first conv of every stage after the
// first has stride 2. Stages continue until both spatial sizes are below 3.
struct ExtractorPlan {
  std::vector<int> layers_per_stage;
  std::vector<int> widths;
  int final_height = 0;
  int final_width = 0;
};
ExtractorPlan plan_extractor(const ExtractorConfig& cfg);

struct UNetConfig {
  std::array<int, 5> widths{32, 64, 128, 256, 512};
  int in_channels = 2;
  int out_channels = 2;
  int height = 16;
  int width = 80;
};

struct ModelConfig {
  ExtractorConfig extractor;
  UNetConfig unet;
  int num_classes = 8;

  // Smaller widths sized for a single-core desk run.
  static ModelConfig desk();
};

// Embedding network: stacked ConvBnAct with progressive downsampling, then a
// fully connected layer to the embedding dimension.
template <typename T>
class Extractor {
 public:
  Extractor() = default;
  Extractor(const ExtractorConfig& cfg, Rng& rng);
  // (N, 2, H, W) -> (N, d)
  Var<T> forward(const Var<T>& x, NormMode mode);
  void collect(const std::string& prefix, ParamList<T>& out);
  const ExtractorConfig& config() const { return cfg_; }

 private:
  ExtractorConfig cfg_;
  std::vector<ConvBnAct<T>> blocks_;
  Linear<T> fc_;
};

// Cosine classifier on the hypersphere of radius delta: logits are
// (w_j / |w_j|) . (delta z / |z|).
template <typename T>
class HypersphereClassifier {
 public:
  HypersphereClassifier() = default;
  HypersphereClassifier(int embedding_dim, int num_classes, Rng& rng);
  Var<T> logits(const Var<T>& z, T radius) const;
  Var<T> probabilities(const Var<T>& z, T radius) const;
  void collect(const std::string& prefix, ParamList<T>& out);
  const Var<T>& weight() const { return weight_; }

 private:
  Var<T> weight_;
};

// Encoder-decoder with skip connections. The bottleneck (C5, H/16, W/16) is
// offset by a caller-supplied term before decoding.
template <typename T>
class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& cfg, Rng& rng);
  // With replace_bottleneck the encoder output is discarded and the offset
  // alone is decoded, leaving only the skip paths to carry the input.
  Var<T> forward(const Var<T>& x, const Var<T>& bottleneck_offset, NormMode mode, bool replace_bottleneck = false);
  void collect(const std::string& prefix, ParamList<T>& out);
  Shape bottleneck_shape(int batch) const;
  const UNetConfig& config() const { return cfg_; }

 private:
  UNetConfig cfg_;
  DoubleConv<T> inc_;
  std::array<DownConv<T>, 4> down_;
  std::array<UpConv<T>, 4> up_;
  Conv2d<T> out_;
};

// Background network: bottleneck offset by unscaled standard normal noise.
template <typename T>
class BackgroundExtractor {
 public:
  BackgroundExtractor() = default;
  BackgroundExtractor(const UNetConfig& cfg, Rng& rng) : net_(cfg, rng) {}
  Var<T> forward(const Var<T>& x, const Tensor<T>& noise, NormMode mode);
  Tensor<T> sample_noise(int batch, Rng& rng) const;
  void collect(const std::string& prefix, ParamList<T>& out) { net_.collect(prefix, out); }
  Shape bottleneck_shape(int batch) const { return net_.bottleneck_shape(batch); }

 private:
  UNet<T> net_;
};

// Generator: bottleneck offset by a learned linear map of the embedding.
template <typename T>
class SignalGenerator {
 public:
  SignalGenerator() = default;
  SignalGenerator(const UNetConfig& cfg, int embedding_dim, Rng& rng);
  Var<T> forward(const Var<T>& background, const Var<T>& z, NormMode mode);
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  UNet<T> net_;
  Linear<T> project_;
};

// All four networks. Seeded construction is deterministic.
template <typename T>
struct Networks {
  ModelConfig config;
  Extractor<T> F;
  HypersphereClassifier<T> W;
  BackgroundExtractor<T> Q;
  SignalGenerator<T> G;

  Networks() = default;
  Networks(const ModelConfig& cfg, std::uint64_t seed);

  ParamList<T> fw_params();
  ParamList<T> qg_params();
  ParamList<T> all_params();
};

// Value-level helpers on plain vectors.
// delta * z / |z|; throws DegenerateError for z = 0.
std::vector<double> hypersphere_project(const std::vector<double>& z, double delta);
// softmax_j( (w_j / |w_j|) . hypersphere_project(z, delta) )
std::vector<double> classifier_prob(const std::vector<std::vector<double>>& w, const std::vector<double>& z,
                                    double delta);

// ---------------------------------------------------------------------------
// Checkpoints: <stem>.bin (named float32 tensors) and <stem>.json sidecar.

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  nlohmann::json config = nlohmann::json::object();
  int epoch = 0;
  std::uint64_t seed = 0;
  nlohmann::json loss_history = nlohmann::json::array();
  int format_version = kCheckpointFormatVersion;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& stem, const ParamList<float>& params, const CheckpointMeta& meta);
// Loads values into params by name; shapes must match. Unless allow_extra,
// the file must hold exactly these tensors.
CheckpointMeta load_checkpoint(const std::filesystem::path& stem, const ParamList<float>& params,
                               bool allow_extra = false);
// Top-level parameter groups stored in a checkpoint, in file order (e.g. F, W, Q, G).
std::vector<std::string> checkpoint_groups(const std::filesystem::path& stem);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& stem);

}  // namespace drrff
