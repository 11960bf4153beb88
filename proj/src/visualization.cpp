#include "drrff/visualization.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "drrff/error.hpp"
#include "drrff/preprocessing.hpp"

namespace drrff {
namespace {

using json = nlohmann::json;
using Rgb = std::array<std::uint8_t, 3>;

constexpr std::size_t kPanelSize = static_cast<std::size_t>(kImageRows) * kImageCols;

Tensor<float> take_panel(const Tensor<float>& batch, int n, int channel) {
  Tensor<float> p(Shape{kImageRows, kImageCols});
  for (int r = 0; r < kImageRows; ++r) {
    for (int c = 0; c < kImageCols; ++c) p[static_cast<std::size_t>(r) * kImageCols + c] = batch.at(n, channel, r, c);
  }
  return p;
}

Tensor<float> abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  Tensor<float> d(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) d[k] = std::fabs(a[k] - b[k]);
  return d;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Blue for negative, white at zero, red for positive, scaled by `range`.
Rgb diverging(double v, double range) {
  const double t = range > 0 ? std::clamp(v / range, -1.0, 1.0) : 0.0;
  if (t >= 0) return {255, to_byte(1 - t), to_byte(1 - t)};
  return {to_byte(1 + t), to_byte(1 + t), 255};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, Rgb color) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    img.set(x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

const std::array<Rgb, 8> kPalette{{{31, 119, 180},
                                    {214, 39, 40},
                                    {44, 160, 44},
                                    {255, 127, 14},
                                    {148, 103, 189},
                                    {140, 86, 75},
                                    {227, 119, 194},
                                    {127, 127, 127}}};

}  // namespace

void RgbImage::set(int x, int y, Rgb rgb) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  std::copy(rgb.begin(), rgb.end(), pixels.begin() + (static_cast<std::ptrdiff_t>(y) * width + x) * 3);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  if (img.width <= 0 || img.height <= 0) throw ShapeError("empty image");
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("png encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("write failed for " + path.string());
}

void write_panel_csv(const std::filesystem::path& path, const Tensor<float>& panel) {
  if (panel.size() != kPanelSize) throw ShapeError("panel must hold 16 x 80 values");
  std::string out;
  char buf[32];
  for (int r = 0; r < kImageRows; ++r) {
    for (int c = 0; c < kImageCols; ++c) {
      if (c) out += ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, panel[static_cast<std::size_t>(r) * kImageCols + c]);
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  write_text(path, out);
}

Tensor<float> read_panel_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<float> values;
  std::string line;
  int rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::size_t cols = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      float v = 0;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw IoError("bad number in " + path.string());
      values.push_back(v);
      ++cols;
      p = res.ptr;
      if (p < end && *p == ',') ++p;
    }
    if (cols != static_cast<std::size_t>(kImageCols)) throw ShapeError("panel row must hold 80 values");
    ++rows;
  }
  if (rows != kImageRows) throw ShapeError("panel must have 16 rows");
  return Tensor<float>(Shape{kImageRows, kImageCols}, std::move(values));
}

VizGrid compute_disentanglement(Networks<float>& nets, const ComplexSignal& x1, const ComplexSignal& x2,
                                const VizOptions& opt) {
  if (opt.channel != 0 && opt.channel != 1) throw ConfigError("viz channel must be 0 (real) or 1 (imaginary)");
  const std::vector<ComplexSignal> pair{x1, x2};
  const Var<float> x = Var<float>::constant(make_batch(pair));
  Rng rng(Rng::derive(opt.seed, "viz-noise"));
  const Var<float> bg = nets.Q.forward(x, nets.Q.sample_noise(2, rng), NormMode::kRunning);
  const Var<float> z = nets.F.forward(x, NormMode::kRunning);
  // Swap the backgrounds so record 1's embedding meets record 2's background.
  const std::vector<int> swap{1, 0};
  const Var<float> syn = nets.G.forward(ops::index_select(bg, swap), z, NormMode::kRunning);

  VizGrid g;
  g.channel = opt.channel;
  g.same_record = x1.samples == x2.samples;
  g.panels[0] = take_panel(x.value(), 0, opt.channel);
  g.panels[1] = take_panel(x.value(), 1, opt.channel);
  g.panels[2] = take_panel(bg.value(), 0, opt.channel);
  g.panels[3] = take_panel(bg.value(), 1, opt.channel);
  g.panels[4] = take_panel(syn.value(), 0, opt.channel);
  g.panels[5] = take_panel(syn.value(), 1, opt.channel);
  g.panels[6] = abs_diff(g.panels[0], g.panels[4]);
  g.panels[7] = abs_diff(g.panels[1], g.panels[5]);
  return g;
}

VizGrid render_disentanglement(Networks<float>& nets, const Dataset& ds, std::size_t i, std::size_t j,
                               const VizOptions& opt, const std::filesystem::path& dir, const std::string& name) {
  if (i >= ds.size() || j >= ds.size()) throw ConfigError("viz record index out of range");
  if (opt.pixel_scale < 1) throw ConfigError("viz pixel scale must be >= 1");
  VizGrid g = compute_disentanglement(nets, ds.signals[i], ds.signals[j], opt);
  g.same_record = g.same_record || i == j;
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < g.panels.size(); ++k) {
    write_panel_csv(dir / (name + "." + kVizPanelNames[k] + ".csv"), g.panels[k]);
  }

  // Two columns (record 1, record 2) by four rows (raw, background, synthetic, difference).
  const int s = opt.pixel_scale, gap = 2 * s;
  const int pw = kImageCols * s, ph = kImageRows * s;
  RgbImage img(2 * pw + 3 * gap, 4 * ph + 5 * gap, 200);
  for (std::size_t k = 0; k < g.panels.size(); ++k) {
    const Tensor<float>& p = g.panels[k];
    double range = 0;
    for (float v : p.values()) range = std::max(range, std::fabs(static_cast<double>(v)));
    const int ox = gap + static_cast<int>(k % 2) * (pw + gap);
    const int oy = gap + static_cast<int>(k / 2) * (ph + gap);
    for (int r = 0; r < kImageRows; ++r) {
      for (int c = 0; c < kImageCols; ++c) {
        const Rgb color = diverging(p[static_cast<std::size_t>(r) * kImageCols + c], range);
        for (int dy = 0; dy < s; ++dy) {
          for (int dx = 0; dx < s; ++dx) img.set(ox + c * s + dx, oy + r * s + dy, color);
        }
      }
    }
  }
  write_png(dir / (name + ".png"), img);

  json meta{{"record_1", i},
            {"record_2", j},
            {"device_1", ds.device_id(i)},
            {"device_2", ds.device_id(j)},
            {"channel", opt.channel == 0 ? "real" : "imag"},
            {"seed", opt.seed},
            {"same_record", g.same_record},
            {"same_device", ds.device_id(i) == ds.device_id(j)},
            {"panels", kVizPanelNames}};
  write_text(dir / (name + ".json"), meta.dump(2) + "\n");
  return g;
}

std::vector<CurvePoint> learning_curves(const std::vector<json>& histories) {
  if (histories.empty()) throw ConfigError("learning curves need at least one history");
  // (method, split, epoch) -> sum, count
  std::map<std::tuple<std::string, std::string, int>, std::pair<double, int>> acc;
  for (const json& h : histories) {
    if (!h.is_object() || !h.contains("method") || !h.contains("eval_history") || !h.at("eval_history").is_array()) {
      throw ConfigError("malformed history: needs 'method' and an 'eval_history' array");
    }
    const json& evals = h.at("eval_history");
    if (evals.empty()) throw ConfigError("history has an empty eval_history");
    const std::string method = h.at("method").get<std::string>();
    for (const json& e : evals) {
      if (!e.contains("epoch") || !e.contains("auc") || !e.at("auc").is_object()) {
        throw ConfigError("malformed eval_history entry");
      }
      const int epoch = e.at("epoch").get<int>();
      for (const auto& [split, auc] : e.at("auc").items()) {
        if (!auc.is_number()) throw ConfigError("non-numeric AUC in eval_history");
        auto& [sum, count] = acc[{method, split, epoch}];
        sum += auc.get<double>();
        ++count;
      }
    }
  }
  std::vector<CurvePoint> out;
  out.reserve(acc.size());
  for (const auto& [key, v] : acc) {
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), v.first / v.second, v.second});
  }
  return out;
}

std::vector<CurvePoint> render_learning_curves(const std::vector<std::filesystem::path>& history_files,
                                               const std::filesystem::path& dir) {
  std::vector<json> histories;
  for (const auto& path : history_files) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path.string());
    try {
      histories.push_back(json::parse(f));
    } catch (const json::parse_error& e) {
      throw ConfigError("malformed history " + path.string() + ": " + e.what());
    }
  }
  const std::vector<CurvePoint> points = learning_curves(histories);

  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "method,split,epoch,mean_auc\n";
  char buf[32];
  for (const auto& p : points) {
    const auto res = std::to_chars(buf, buf + sizeof buf, p.mean_auc);
    csv << p.method << ',' << p.split << ',' << p.epoch << ',' << std::string_view(buf, res.ptr - buf) << '\n';
  }
  write_text(dir / "curves.csv", csv.str());

  // One panel per split; x is the epoch, y spans AUC 0.5..1. Colors follow
  // method order. The legend goes into curves.json, the plot has no text.
  std::set<std::string> split_set, method_set;
  int max_epoch = 1;
  for (const auto& p : points) {
    split_set.insert(p.split);
    method_set.insert(p.method);
    max_epoch = std::max(max_epoch, p.epoch);
  }
  const std::vector<std::string> splits(split_set.begin(), split_set.end());
  const std::vector<std::string> methods(method_set.begin(), method_set.end());
  constexpr int kW = 480, kH = 240, kMargin = 20;
  RgbImage img(kW, kH * static_cast<int>(splits.size()), 255);
  const auto to_xy = [&](int panel, int epoch, double auc) {
    const double fx = max_epoch > 1 ? static_cast<double>(epoch - 1) / (max_epoch - 1) : 0.5;
    const double fy = std::clamp((auc - 0.5) / 0.5, 0.0, 1.0);
    return std::pair<int, int>{kMargin + static_cast<int>(std::lround(fx * (kW - 2 * kMargin))),
                               panel * kH + kH - kMargin - static_cast<int>(std::lround(fy * (kH - 2 * kMargin)))};
  };
  json legend = json::object();
  for (std::size_t si = 0; si < splits.size(); ++si) {
    const int panel = static_cast<int>(si);
    const auto [x0, y0] = to_xy(panel, 1, 0.5);
    const auto [x1, y1] = to_xy(panel, max_epoch, 1.0);
    draw_line(img, x0, y0, x1, y0, {0, 0, 0});
    draw_line(img, x0, y0, x0, y1, {0, 0, 0});
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const Rgb color = kPalette[mi % kPalette.size()];
      bool has_prev = false;
      std::pair<int, int> prev;
      for (const auto& p : points) {
        if (p.method != methods[mi] || p.split != splits[si]) continue;
        const auto cur = to_xy(panel, p.epoch, p.mean_auc);
        if (has_prev) draw_line(img, prev.first, prev.second, cur.first, cur.second, color);
        img.set(cur.first, cur.second, color);
        prev = cur;
        has_prev = true;
      }
    }
  }
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const Rgb c = kPalette[mi % kPalette.size()];
    legend[methods[mi]] = {c[0], c[1], c[2]};
  }
  write_png(dir / "curves.png", img);
  write_text(dir / "curves.json",
             json{{"panels_top_to_bottom", splits}, {"method_colors", legend}, {"auc_axis", {0.5, 1.0}}}.dump(2) +
                 "\n");
  return points;
}

}  // namespace drrff
