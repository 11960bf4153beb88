#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "drrff/autograd.hpp"
#include "drrff/dataset.hpp"
#include "drrff/models.hpp"
#include "drrff/rng.hpp"
#include "drrff/tensor.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("drrff_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <typename T>
drrff::Tensor<T> random_tensor(drrff::Shape shape, drrff::Rng& rng, double scale = 1.0) {
  drrff::Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

// Narrow networks with the full-size layout, fast enough for unit tests.
inline drrff::ModelConfig small_model_config(int num_classes) {
  drrff::ModelConfig cfg;
  cfg.extractor.num_layers = 7;
  cfg.extractor.base_width = 4;
  cfg.extractor.max_width = 8;
  cfg.extractor.embedding_dim = 16;
  cfg.unet.widths = {4, 4, 8, 8, 8};
  cfg.num_classes = num_classes;
  return cfg;
}

// One desk-style split over `devices` known devices.
inline drrff::Dataset small_split(int devices, int per_device, std::uint64_t seed, const std::string& split = "train") {
  drrff::DatasetConfig cfg = drrff::DatasetConfig::desk_default();
  cfg.num_devices = devices;
  cfg.num_unknown_devices = 0;
  drrff::SplitConfig s = cfg.split(split);
  s.per_device = per_device;
  return drrff::generate_split(cfg, s, seed);
}

// Largest relative error between the analytic gradient of f and central
// differences, over every element of every input. f maps the inputs to a
// scalar. The error is |a - n| / max(|a| + |n|, floor).
inline double max_grad_error(const std::function<drrff::Var<double>(const std::vector<drrff::Var<double>>&)>& f,
                             const std::vector<drrff::Tensor<double>>& inputs, double h = 1e-6,
                             double floor = 1e-6) {
  using drrff::Var;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(Var<double>::leaf(t, true));
  f(vars).backward();
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      const auto eval = [&](double delta) {
        std::vector<Var<double>> probe;
        for (std::size_t m = 0; m < inputs.size(); ++m) {
          drrff::Tensor<double> t = inputs[m];
          if (m == k) t[e] += delta;
          probe.push_back(Var<double>::constant(t));
        }
        return f(probe).value().item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double analytic = vars[k].has_grad() ? vars[k].grad()[e] : 0.0;
      const double err = std::fabs(analytic - numeric) / std::max(std::fabs(analytic) + std::fabs(numeric), floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Worst relative error of directional derivatives over random unit
// directions in the joint input space: analytic g.u against
// (f(x + h u) - f(x - h u)) / 2h.
inline double max_directional_error(
    const std::function<drrff::Var<double>(const std::vector<drrff::Var<double>>&)>& f,
    const std::vector<drrff::Tensor<double>>& inputs, int directions, drrff::Rng& rng, double h = 1e-5,
    double floor = 1e-8) {
  using drrff::Var;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(Var<double>::leaf(t, true));
  f(vars).backward();
  double worst = 0.0;
  for (int d = 0; d < directions; ++d) {
    std::vector<drrff::Tensor<double>> dir;
    double n2 = 0.0;
    for (const auto& t : inputs) {
      dir.push_back(random_tensor<double>(t.shape(), rng));
      for (double v : dir.back().values()) n2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(n2);
    double analytic = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      for (std::size_t e = 0; e < inputs[k].size(); ++e) {
        dir[k][e] *= inv;
        if (vars[k].has_grad()) analytic += vars[k].grad()[e] * dir[k][e];
      }
    }
    const auto eval = [&](double step) {
      std::vector<Var<double>> probe;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        drrff::Tensor<double> t = inputs[k];
        for (std::size_t e = 0; e < t.size(); ++e) t[e] += step * dir[k][e];
        probe.push_back(Var<double>::constant(t));
      }
      return f(probe).value().item();
    };
    const double numeric = (eval(h) - eval(-h)) / (2 * h);
    worst = std::max(worst, std::fabs(analytic - numeric) / std::max(std::fabs(analytic) + std::fabs(numeric), floor));
  }
  return worst;
}

}  // namespace testing
