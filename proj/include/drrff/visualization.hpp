#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "drrff/dataset.hpp"
#include "drrff/models.hpp"
#include "drrff/tensor.hpp"

namespace drrff {

// Panel order of a disentanglement grid. "syn_12" carries the fingerprint of
// record 1 on the background of record 2.
inline constexpr std::array<const char*, 8> kVizPanelNames{"raw_1", "raw_2",  "background_1", "background_2",
                                                           "syn_12", "syn_21", "diff_1",       "diff_2"};

struct VizGrid {
  std::array<Tensor<float>, 8> panels;  // each (16, 80), one image channel
  int channel = 0;                      // 0 real, 1 imaginary
  bool same_record = false;
};

struct VizOptions {
  int channel = 0;
  std::uint64_t seed = 0;  // background noise
  int pixel_scale = 4;
};

// All eight panels for records x1 and x2 with inference-mode networks.
VizGrid compute_disentanglement(Networks<float>& nets, const ComplexSignal& x1, const ComplexSignal& x2,
                                const VizOptions& opt);

// Computes the grid for records i and j of ds and writes <dir>/<name>.png,
// <dir>/<name>.<panel>.csv and <dir>/<name>.json.
VizGrid render_disentanglement(Networks<float>& nets, const Dataset& ds, std::size_t i, std::size_t j,
                               const VizOptions& opt, const std::filesystem::path& dir, const std::string& name);

// Rows of 80 comma-separated values, shortest round-trip formatting.
void write_panel_csv(const std::filesystem::path& path, const Tensor<float>& panel);
Tensor<float> read_panel_csv(const std::filesystem::path& path);

// 8-bit RGB, rows top to bottom. No timestamp chunk, so output is byte-stable.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 255) : width(w), height(h), pixels(std::size_t(w) * h * 3, fill) {}
  void set(int x, int y, std::array<std::uint8_t, 3> rgb);
};
void write_png(const std::filesystem::path& path, const RgbImage& img);

struct CurvePoint {
  std::string method;
  std::string split;
  int epoch = 0;
  double mean_auc = 0.0;
  int runs = 0;
};

// Mean AUC per (method, split, epoch) over the given history.json files,
// sorted by method, split, epoch. Throws ConfigError on a malformed history or
// one without evaluations.
std::vector<CurvePoint> learning_curves(const std::vector<nlohmann::json>& histories);
// Reads the files, writes <dir>/curves.csv (method,split,epoch,mean_auc) and
// <dir>/curves.png with one panel per split and one line per method.
std::vector<CurvePoint> render_learning_curves(const std::vector<std::filesystem::path>& history_files,
                                               const std::filesystem::path& dir);

}  // namespace drrff
