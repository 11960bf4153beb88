#include "drrff/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "drrff/error.hpp"

namespace drrff {
namespace {

using json = nlohmann::json;

template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

std::uint64_t fnv1a_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamList

template <typename T>
std::size_t ParamList<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var->size();
  return n;
}

template <typename T>
void ParamList<T>::set_requires_grad(bool flag) const {
  for (const auto& p : params) p.var->set_requires_grad(flag);
}

template <typename T>
void ParamList<T>::zero_grad() const {
  for (const auto& p : params) p.var->zero_grad();
}

template <typename T>
std::uint64_t param_hash(const ParamList<T>& list, bool include_buffers) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : list.params) {
    h = fnv1a_bytes(h, p.name.data(), p.name.size());
    h = fnv1a_bytes(h, p.var->value().data(), p.var->size() * sizeof(T));
  }
  if (include_buffers) {
    for (const auto& b : list.buffers) {
      h = fnv1a_bytes(h, b.name.data(), b.name.size());
      h = fnv1a_bytes(h, b.tensor->data(), b.tensor->size() * sizeof(T));
    }
  }
  return h;
}

template <typename T>
std::vector<Tensor<T>> snapshot(const ParamList<T>& list) {
  std::vector<Tensor<T>> out;
  for (const auto& p : list.params) out.push_back(p.var->value());
  for (const auto& b : list.buffers) out.push_back(*b.tensor);
  return out;
}

template <typename T>
void restore(const ParamList<T>& list, const std::vector<Tensor<T>>& values) {
  if (values.size() != list.params.size() + list.buffers.size()) throw ShapeError("restore: size mismatch");
  std::size_t i = 0;
  for (const auto& p : list.params) {
    if (values[i].shape() != p.var->shape()) throw ShapeError("restore: shape mismatch for " + p.name);
    p.var->mutable_value() = values[i++];
  }
  for (const auto& b : list.buffers) {
    if (values[i].shape() != b.tensor->shape()) throw ShapeError("restore: shape mismatch for " + b.name);
    *b.tensor = values[i++];
  }
}

// ---------------------------------------------------------------------------
// Layers

template <typename T>
Conv2d<T>::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, Rng& rng)
    : stride_(stride), pad_(pad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel));
  weight_ = Var<T>::leaf(uniform_init<T>(Shape{out_ch, in_ch, kernel, kernel}, bound, rng), true);
  if (bias) bias_ = Var<T>::leaf(uniform_init<T>(Shape{out_ch}, bound, rng), true);
}

template <typename T>
Var<T> Conv2d<T>::forward(const Var<T>& x) const {
  return ops::conv2d(x, weight_, bias_, stride_, pad_);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.params.push_back({prefix + ".weight", &weight_});
  if (bias_.defined()) out.params.push_back({prefix + ".bias", &bias_});
}

template <typename T>
BatchNorm<T>::BatchNorm(int channels)
    : gamma_(Var<T>::leaf(Tensor<T>(Shape{channels}, T(1)), true)),
      beta_(Var<T>::leaf(Tensor<T>(Shape{channels}, T(0)), true)),
      running_mean_(Shape{channels}, T(0)),
      running_var_(Shape{channels}, T(1)) {}

template <typename T>
Var<T> BatchNorm<T>::forward(const Var<T>& x, NormMode mode) {
  return ops::batch_norm(x, gamma_, beta_, running_mean_, running_var_, mode, T(0.1), T(1e-5));
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.params.push_back({prefix + ".gamma", &gamma_});
  out.params.push_back({prefix + ".beta", &beta_});
  out.buffers.push_back({prefix + ".running_mean", &running_mean_});
  out.buffers.push_back({prefix + ".running_var", &running_var_});
}

template <typename T>
Linear<T>::Linear(int in, int out, bool bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Var<T>::leaf(uniform_init<T>(Shape{out, in}, bound, rng), true);
  if (bias) bias_ = Var<T>::leaf(uniform_init<T>(Shape{out}, bound, rng), true);
}

template <typename T>
Var<T> Linear<T>::forward(const Var<T>& x) const {
  return ops::linear(x, weight_, bias_);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.params.push_back({prefix + ".weight", &weight_});
  if (bias_.defined()) out.params.push_back({prefix + ".bias", &bias_});
}

template <typename T>
ConvBnAct<T>::ConvBnAct(int in_ch, int out_ch, int stride, double slope, Rng& rng)
    : conv_(in_ch, out_ch, 3, stride, 1, false, rng), bn_(out_ch), slope_(static_cast<T>(slope)) {}

template <typename T>
Var<T> ConvBnAct<T>::forward(const Var<T>& x, NormMode mode) {
  return ops::leaky_relu(bn_.forward(conv_.forward(x), mode), slope_);
}

template <typename T>
void ConvBnAct<T>::collect(const std::string& prefix, ParamList<T>& out) {
  conv_.collect(prefix + ".conv", out);
  bn_.collect(prefix + ".bn", out);
}

template <typename T>
DoubleConv<T>::DoubleConv(int in_ch, int out_ch, Rng& rng)
    : a_(in_ch, out_ch, 1, 0.0, rng), b_(out_ch, out_ch, 1, 0.0, rng) {}

template <typename T>
Var<T> DoubleConv<T>::forward(const Var<T>& x, NormMode mode) {
  return b_.forward(a_.forward(x, mode), mode);
}

template <typename T>
void DoubleConv<T>::collect(const std::string& prefix, ParamList<T>& out) {
  a_.collect(prefix + ".0", out);
  b_.collect(prefix + ".1", out);
}

template <typename T>
DownConv<T>::DownConv(int in_ch, int out_ch, Rng& rng) : conv_(in_ch, out_ch, rng) {}

template <typename T>
Var<T> DownConv<T>::forward(const Var<T>& x, NormMode mode) {
  return conv_.forward(ops::max_pool2(x), mode);
}

template <typename T>
void DownConv<T>::collect(const std::string& prefix, ParamList<T>& out) {
  conv_.collect(prefix, out);
}

template <typename T>
UpConv<T>::UpConv(int in_ch, int out_ch, Rng& rng) : conv_(in_ch, out_ch, rng) {}

template <typename T>
Var<T> UpConv<T>::forward(const Var<T>& x, NormMode mode) {
  return conv_.forward(ops::upsample2(x), mode);
}

template <typename T>
void UpConv<T>::collect(const std::string& prefix, ParamList<T>& out) {
  conv_.collect(prefix, out);
}

// ---------------------------------------------------------------------------
// Extractor

ExtractorPlan plan_extractor(const ExtractorConfig& cfg) {
  if (cfg.num_layers < 1 || cfg.embedding_dim < 1 || cfg.base_width < 1 || cfg.max_width < cfg.base_width) {
    throw ConfigError("extractor: invalid layer count or widths");
  }
  if (cfg.height < 1 || cfg.width < 1 || cfg.in_channels < 1) throw ConfigError("extractor: invalid input shape");
  ExtractorPlan plan;
  int h = cfg.height;
  int w = cfg.width;
  int halvings = 0;
  while (h >= 3 || w >= 3) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    ++halvings;
  }
  const int stages = halvings + 1;
  if (cfg.num_layers < stages) {
    throw ConfigError("extractor: " + std::to_string(cfg.num_layers) + " layers cannot reach maps below 3x3 from " +
                      std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + " (need at least " +
                      std::to_string(stages) + ")");
  }
  plan.final_height = h;
  plan.final_width = w;
  const int per = cfg.num_layers / stages;
  const int extra = cfg.num_layers % stages;
  for (int s = 0; s < stages; ++s) {
    plan.layers_per_stage.push_back(per + (s < extra ? 1 : 0));
    long width = static_cast<long>(cfg.base_width) << std::min(s, 20);
    plan.widths.push_back(static_cast<int>(std::min<long>(width, cfg.max_width)));
  }
  return plan;
}

template <typename T>
Extractor<T>::Extractor(const ExtractorConfig& cfg, Rng& rng) : cfg_(cfg) {
  const ExtractorPlan plan = plan_extractor(cfg);
  int in = cfg.in_channels;
  for (std::size_t s = 0; s < plan.widths.size(); ++s) {
    for (int l = 0; l < plan.layers_per_stage[s]; ++l) {
      const int stride = (s > 0 && l == 0) ? 2 : 1;
      blocks_.emplace_back(in, plan.widths[s], stride, cfg.leaky_slope, rng);
      in = plan.widths[s];
    }
  }
  fc_ = Linear<T>(in * plan.final_height * plan.final_width, cfg.embedding_dim, true, rng);
}

template <typename T>
Var<T> Extractor<T>::forward(const Var<T>& x, NormMode mode) {
  const Shape expect{cfg_.in_channels, cfg_.height, cfg_.width};
  if (x.shape().size() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != expect) {
    throw ShapeError("extractor: expected (N, " + std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(cfg_.height) + ", " + std::to_string(cfg_.width) + "), got " +
                     to_string(x.shape()));
  }
  Var<T> h = x;
  for (auto& b : blocks_) h = b.forward(h, mode);
  const int n = h.shape()[0];
  const int flat = static_cast<int>(h.size()) / n;
  return fc_.forward(ops::reshape(h, Shape{n, flat}));
}

template <typename T>
void Extractor<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  fc_.collect(prefix + ".fc", out);
}

// ---------------------------------------------------------------------------
// Classifier

template <typename T>
HypersphereClassifier<T>::HypersphereClassifier(int embedding_dim, int num_classes, Rng& rng) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  const double bound = 1.0 / std::sqrt(static_cast<double>(embedding_dim));
  weight_ = Var<T>::leaf(uniform_init<T>(Shape{num_classes, embedding_dim}, bound, rng), true);
}

template <typename T>
Var<T> HypersphereClassifier<T>::logits(const Var<T>& z, T radius) const {
  return ops::matmul_nt(ops::normalize_rows(z, radius), ops::normalize_rows(weight_, T(1)));
}

template <typename T>
Var<T> HypersphereClassifier<T>::probabilities(const Var<T>& z, T radius) const {
  return ops::softmax_rows(logits(z, radius));
}

template <typename T>
void HypersphereClassifier<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.params.push_back({prefix + ".weight", &weight_});
}

// ---------------------------------------------------------------------------
// U-net

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  for (int w : cfg.widths) {
    if (w < 1) throw ConfigError("unet: widths must be positive");
  }
  if (cfg.height % 16 != 0 || cfg.width % 16 != 0) {
    throw ConfigError("unet: input " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                      " cannot be halved four times");
  }
  const auto& c = cfg.widths;
  inc_ = DoubleConv<T>(cfg.in_channels, c[0], rng);
  for (int i = 0; i < 4; ++i) down_[i] = DownConv<T>(c[i], c[i + 1], rng);
  // up_[0] decodes the bottleneck; later stages take [previous up output, skip].
  up_[0] = UpConv<T>(c[4], c[3], rng);
  for (int i = 1; i < 4; ++i) up_[i] = UpConv<T>(2 * c[4 - i], c[3 - i], rng);
  out_ = Conv2d<T>(2 * c[0], cfg.out_channels, 1, 1, 0, true, rng);
}

template <typename T>
Shape UNet<T>::bottleneck_shape(int batch) const {
  return Shape{batch, cfg_.widths[4], cfg_.height / 16, cfg_.width / 16};
}

template <typename T>
Var<T> UNet<T>::forward(const Var<T>& x, const Var<T>& bottleneck_offset, NormMode mode, bool replace_bottleneck) {
  std::array<Var<T>, 5> enc;
  enc[0] = inc_.forward(x, mode);
  for (int i = 0; i < 4; ++i) enc[i + 1] = down_[i].forward(enc[i], mode);
  if (bottleneck_offset.shape() != enc[4].shape()) {
    throw ShapeError("unet: bottleneck offset " + to_string(bottleneck_offset.shape()) + " vs " +
                     to_string(enc[4].shape()));
  }
  Var<T> h = replace_bottleneck ? bottleneck_offset : ops::add(enc[4], bottleneck_offset);
  for (int i = 0; i < 4; ++i) h = ops::concat_channels(up_[i].forward(h, mode), enc[3 - i]);
  return out_.forward(h);
}

template <typename T>
void UNet<T>::collect(const std::string& prefix, ParamList<T>& out) {
  inc_.collect(prefix + ".inc", out);
  for (int i = 0; i < 4; ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
  for (int i = 0; i < 4; ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
  out_.collect(prefix + ".out", out);
}

template <typename T>
Var<T> BackgroundExtractor<T>::forward(const Var<T>& x, const Tensor<T>& noise, NormMode mode) {
  return net_.forward(x, Var<T>::constant(noise), mode);
}

template <typename T>
Tensor<T> BackgroundExtractor<T>::sample_noise(int batch, Rng& rng) const {
  Tensor<T> n(net_.bottleneck_shape(batch));
  for (auto& v : n.storage()) v = static_cast<T>(rng.normal());
  return n;
}

template <typename T>
SignalGenerator<T>::SignalGenerator(const UNetConfig& cfg, int embedding_dim, Rng& rng) : net_(cfg, rng) {
  const Shape b = net_.bottleneck_shape(1);
  project_ = Linear<T>(embedding_dim, b[1] * b[2] * b[3], false, rng);
}

template <typename T>
Var<T> SignalGenerator<T>::forward(const Var<T>& background, const Var<T>& z, NormMode mode) {
  const int n = background.shape()[0];
  if (z.shape().size() != 2 || z.shape()[0] != n) {
    throw ShapeError("generator: embedding " + to_string(z.shape()) + " for batch of " + std::to_string(n));
  }
  return net_.forward(background, ops::reshape(project_.forward(z), net_.bottleneck_shape(n)), mode);
}

template <typename T>
void SignalGenerator<T>::collect(const std::string& prefix, ParamList<T>& out) {
  net_.collect(prefix, out);
  project_.collect(prefix + ".project", out);
}

// ---------------------------------------------------------------------------
// Networks

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.extractor.base_width = 8;
  cfg.extractor.max_width = 64;
  cfg.unet.widths = {8, 16, 32, 64, 128};
  return cfg;
}

template <typename T>
Networks<T>::Networks(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  Rng rf(Rng::derive(seed, "init:F"));
  Rng rw(Rng::derive(seed, "init:W"));
  Rng rq(Rng::derive(seed, "init:Q"));
  Rng rg(Rng::derive(seed, "init:G"));
  if (cfg.extractor.in_channels != cfg.unet.out_channels) {
    throw ConfigError("generator output channels must match extractor input channels");
  }
  F = Extractor<T>(cfg.extractor, rf);
  W = HypersphereClassifier<T>(cfg.extractor.embedding_dim, cfg.num_classes, rw);
  Q = BackgroundExtractor<T>(cfg.unet, rq);
  G = SignalGenerator<T>(cfg.unet, cfg.extractor.embedding_dim, rg);
}

template <typename T>
ParamList<T> Networks<T>::fw_params() {
  ParamList<T> out;
  F.collect("F", out);
  W.collect("W", out);
  return out;
}

template <typename T>
ParamList<T> Networks<T>::qg_params() {
  ParamList<T> out;
  Q.collect("Q", out);
  G.collect("G", out);
  return out;
}

template <typename T>
ParamList<T> Networks<T>::all_params() {
  ParamList<T> out = fw_params();
  out.append(qg_params());
  return out;
}

// ---------------------------------------------------------------------------
// Value helpers

std::vector<double> hypersphere_project(const std::vector<double>& z, double delta) {
  if (z.empty()) throw ShapeError("hypersphere_project: empty vector");
  Tensor<double> t(Shape{1, static_cast<int>(z.size())}, z);
  return ops::normalize_rows(Var<double>::constant(t), delta).value().storage();
}

std::vector<double> classifier_prob(const std::vector<std::vector<double>>& w, const std::vector<double>& z,
                                    double delta) {
  if (w.size() < 2) throw ConfigError("classifier_prob: need at least 2 classes");
  const int d = static_cast<int>(z.size());
  std::vector<double> flat;
  for (const auto& row : w) {
    if (static_cast<int>(row.size()) != d) throw ShapeError("classifier_prob: weight/embedding size mismatch");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  const auto wv = Var<double>::constant(Tensor<double>(Shape{static_cast<int>(w.size()), d}, flat));
  const auto zv = Var<double>::constant(Tensor<double>(Shape{1, d}, z));
  const auto logits = ops::matmul_nt(ops::normalize_rows(zv, delta), ops::normalize_rows(wv, 1.0));
  return ops::softmax_rows(logits).value().storage();
}

// ---------------------------------------------------------------------------
// Checkpoints

json model_config_to_json(const ModelConfig& cfg) {
  const auto& e = cfg.extractor;
  const auto& u = cfg.unet;
  return json{{"extractor",
               {{"num_layers", e.num_layers},
                {"embedding_dim", e.embedding_dim},
                {"base_width", e.base_width},
                {"max_width", e.max_width},
                {"leaky_slope", e.leaky_slope},
                {"in_channels", e.in_channels},
                {"height", e.height},
                {"width", e.width}}},
              {"unet",
               {{"widths", u.widths},
                {"in_channels", u.in_channels},
                {"out_channels", u.out_channels},
                {"height", u.height},
                {"width", u.width}}},
              {"num_classes", cfg.num_classes}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    auto& e = cfg.extractor;
    const json& je = j.at("extractor");
    e.num_layers = je.at("num_layers").get<int>();
    e.embedding_dim = je.at("embedding_dim").get<int>();
    e.base_width = je.at("base_width").get<int>();
    e.max_width = je.at("max_width").get<int>();
    e.leaky_slope = je.at("leaky_slope").get<double>();
    e.in_channels = je.at("in_channels").get<int>();
    e.height = je.at("height").get<int>();
    e.width = je.at("width").get<int>();
    auto& u = cfg.unet;
    const json& ju = j.at("unet");
    u.widths = ju.at("widths").get<std::array<int, 5>>();
    u.in_channels = ju.at("in_channels").get<int>();
    u.out_channels = ju.at("out_channels").get<int>();
    u.height = ju.at("height").get<int>();
    u.width = ju.at("width").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("model config: ") + ex.what());
  }
  return cfg;
}

namespace {

constexpr char kMagic[4] = {'D', 'R', 'F', 'P'};

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return stem.string() + suffix;
}

void write_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), 4)) throw IoError("checkpoint: truncated file");
  return v;
}

struct TensorRef {
  std::string name;
  Tensor<float>* t;
};

std::vector<TensorRef> tensor_refs(const ParamList<float>& params) {
  std::vector<TensorRef> refs;
  for (const auto& p : params.params) refs.push_back({p.name, &p.var->mutable_value()});
  for (const auto& b : params.buffers) refs.push_back({b.name, b.tensor});
  return refs;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ParamList<float>& params, const CheckpointMeta& meta) {
  std::ofstream f(with_suffix(stem, ".bin"), std::ios::binary);
  if (!f) throw IoError("cannot write " + with_suffix(stem, ".bin").string());
  const auto refs = tensor_refs(params);
  f.write(kMagic, 4);
  write_u32(f, kCheckpointFormatVersion);
  write_u32(f, static_cast<std::uint32_t>(refs.size()));
  for (const auto& r : refs) {
    write_u32(f, static_cast<std::uint32_t>(r.name.size()));
    f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    write_u32(f, static_cast<std::uint32_t>(r.t->rank()));
    for (int d : r.t->shape()) write_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(r.t->data()), static_cast<std::streamsize>(r.t->size() * sizeof(float)));
  }
  if (!f) throw IoError("failed writing checkpoint " + stem.string());

  json side{{"config", meta.config},
            {"epoch", meta.epoch},
            {"seed", meta.seed},
            {"loss_history", meta.loss_history},
            {"format_version", meta.format_version}};
  std::ofstream js(with_suffix(stem, ".json"));
  if (!js) throw IoError("cannot write " + with_suffix(stem, ".json").string());
  js << side.dump(2) << '\n';
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& stem) {
  std::ifstream js(with_suffix(stem, ".json"));
  if (!js) throw IoError("cannot read " + with_suffix(stem, ".json").string());
  CheckpointMeta meta;
  try {
    const json side = json::parse(js);
    meta.format_version = side.at("format_version").get<int>();
    if (meta.format_version != kCheckpointFormatVersion) {
      throw ConfigError("unsupported checkpoint format_version " + std::to_string(meta.format_version));
    }
    meta.config = side.at("config");
    meta.epoch = side.at("epoch").get<int>();
    meta.seed = side.at("seed").get<std::uint64_t>();
    meta.loss_history = side.at("loss_history");
  } catch (const json::exception& ex) {
    throw IoError(std::string("checkpoint sidecar: ") + ex.what());
  }
  return meta;
}

namespace {

std::vector<std::pair<std::string, Tensor<float>>> read_checkpoint_tensors(const std::filesystem::path& stem) {
  const auto path = with_suffix(stem, ".bin");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic");
  if (read_u32(f) != kCheckpointFormatVersion) throw IoError("checkpoint: unsupported version");
  const std::uint32_t count = read_u32(f);
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(read_u32(f), '\0');
    if (!f.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("checkpoint: truncated file");
    Shape shape(read_u32(f));
    for (auto& d : shape) d = static_cast<int>(read_u32(f));
    Tensor<float> t(shape);
    if (!f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw IoError("checkpoint: truncated file");
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

CheckpointMeta load_checkpoint(const std::filesystem::path& stem, const ParamList<float>& params, bool allow_extra) {
  CheckpointMeta meta = read_checkpoint_meta(stem);
  auto stored = read_checkpoint_tensors(stem);
  const auto refs = tensor_refs(params);
  if (!allow_extra && stored.size() != refs.size()) {
    throw ShapeError("checkpoint: tensor count does not match the model");
  }
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& [name, t] : stored) by_name[name] = &t;
  for (const auto& r : refs) {
    const auto it = by_name.find(r.name);
    if (it == by_name.end()) throw ShapeError("checkpoint: missing tensor " + r.name);
    if (it->second->shape() != r.t->shape()) {
      throw ShapeError("checkpoint: " + r.name + " has shape " + to_string(it->second->shape()) +
                       ", model expects " + to_string(r.t->shape()));
    }
    *r.t = std::move(*it->second);
  }
  return meta;
}

std::vector<std::string> checkpoint_groups(const std::filesystem::path& stem) {
  std::vector<std::string> groups;
  for (const auto& [name, t] : read_checkpoint_tensors(stem)) {
    const std::string g = name.substr(0, name.find('.'));
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  return groups;
}

#define DRRFF_INSTANTIATE(T)                                                                   \
  template struct ParamList<T>;                                                                \
  template std::uint64_t param_hash<T>(const ParamList<T>&, bool);                             \
  template std::vector<Tensor<T>> snapshot<T>(const ParamList<T>&);                            \
  template void restore<T>(const ParamList<T>&, const std::vector<Tensor<T>>&);                \
  template class Conv2d<T>;                                                                    \
  template class BatchNorm<T>;                                                                 \
  template class Linear<T>;                                                                    \
  template class ConvBnAct<T>;                                                                 \
  template class DoubleConv<T>;                                                                \
  template class DownConv<T>;                                                                  \
  template class UpConv<T>;                                                                    \
  template class Extractor<T>;                                                                 \
  template class HypersphereClassifier<T>;                                                     \
  template class UNet<T>;                                                                      \
  template class BackgroundExtractor<T>;                                                       \
  template class SignalGenerator<T>;                                                           \
  template struct Networks<T>;

DRRFF_INSTANTIATE(float)
DRRFF_INSTANTIATE(double)

#undef DRRFF_INSTANTIATE

}  // namespace drrff
