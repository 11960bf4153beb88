#include <cmath>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"

#include "drrff/error.hpp"
#include "drrff/preprocessing.hpp"
#include "drrff/visualization.hpp"

using namespace drrff;
using nlohmann::json;

namespace {

json history(const std::string& method, const std::vector<std::pair<int, double>>& aucs) {
  json evals = json::array();
  for (const auto& [epoch, auc] : aucs) evals.push_back({{"epoch", epoch}, {"auc", {{"test", auc}}}});
  return {{"method", method}, {"loss_history", json::array()}, {"eval_history", evals}};
}

}  // namespace

TEST_CASE("panel csv round-trips exactly") {
  Rng rng(1);
  const Tensor<float> p = testing::random_tensor<float>({16, 80}, rng, 3.0);
  testing::TempDir dir("panel");
  write_panel_csv(dir / "p.csv", p);
  CHECK(read_panel_csv(dir / "p.csv") == p);
  std::ofstream(dir / "bad.csv") << "1,2,3\n";
  CHECK_THROWS(read_panel_csv(dir / "bad.csv"));
}

TEST_CASE("disentanglement panels") {
  Networks<float> nets(testing::small_model_config(2), 3);
  const Dataset ds = testing::small_split(2, 2, 4, "val");
  VizOptions opt;
  opt.seed = 9;
  const VizGrid g = compute_disentanglement(nets, ds.signals[0], ds.signals[3], opt);
  for (const auto& p : g.panels) CHECK(p.shape() == Shape{16, 80});
  CHECK_FALSE(g.same_record);
  for (std::size_t k = 0; k < g.panels[0].size(); ++k) {
    CHECK(g.panels[6][k] == std::fabs(g.panels[0][k] - g.panels[4][k]));
    CHECK(g.panels[7][k] == std::fabs(g.panels[1][k] - g.panels[5][k]));
  }
  // the raw panel is the real part of the normalized record image
  const Tensor<float> raw = make_batch(std::vector<ComplexSignal>{ds.signals[0]});
  for (std::size_t k = 0; k < 16 * 80; ++k) CHECK(g.panels[0][k] == raw[k]);

  opt.channel = 1;
  const VizGrid im = compute_disentanglement(nets, ds.signals[0], ds.signals[0], opt);
  CHECK(im.same_record);
  for (std::size_t k = 0; k < 16 * 80; ++k) CHECK(im.panels[0][k] == raw[16 * 80 + k]);
  opt.channel = 2;
  CHECK_THROWS_AS(compute_disentanglement(nets, ds.signals[0], ds.signals[1], opt), ConfigError);
}

TEST_CASE("rendered grids are byte-identical across runs") {
  Networks<float> nets(testing::small_model_config(2), 3);
  const Dataset ds = testing::small_split(2, 2, 4, "val");
  testing::TempDir a("viz_a"), b("viz_b");
  render_disentanglement(nets, ds, 0, 2, VizOptions{}, a.path(), "pair");
  render_disentanglement(nets, ds, 0, 2, VizOptions{}, b.path(), "pair");
  for (const std::string f : {"pair.png", "pair.json", "pair.syn_12.csv", "pair.diff_2.csv"}) {
    CAPTURE(f);
    const std::string bytes = testing::read_bytes(a / f);
    CHECK_FALSE(bytes.empty());
    CHECK(bytes == testing::read_bytes(b / f));
  }
  CHECK(testing::read_bytes(a / "pair.png").substr(1, 3) == "PNG");
  const VizGrid same = render_disentanglement(nets, ds, 1, 1, VizOptions{}, a.path(), "self");
  CHECK(same.same_record);
  CHECK(json::parse(testing::read_bytes(a / "self.json"))["same_record"] == true);
  CHECK_THROWS_AS(render_disentanglement(nets, ds, 0, 99, VizOptions{}, a.path(), "x"), ConfigError);
}

TEST_CASE("learning curves average seeds per epoch") {
  const auto pts = learning_curves({history("dr", {{1, 0.9}, {2, 0.8}}), history("dr", {{1, 0.92}, {2, 0.8}}),
                                    history("dr", {{1, 0.94}, {2, 0.8}}), history("ml", {{1, 0.7}})});
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].method == "dr");
  CHECK(pts[0].epoch == 1);
  CHECK(pts[0].mean_auc == doctest::Approx(0.92));
  CHECK(pts[0].runs == 3);
  CHECK(pts[1].epoch == 2);
  CHECK(pts[2].method == "ml");

  std::vector<std::pair<int, double>> thirty;
  for (int e = 1; e <= 30; ++e) thirty.emplace_back(e, 0.5 + e / 100.0);
  CHECK(learning_curves({history("fir", thirty)}).size() == 30);

  CHECK_THROWS_AS(learning_curves({history("dr", {})}), ConfigError);
  CHECK_THROWS_AS(learning_curves({json{{"method", "dr"}}}), ConfigError);
  CHECK_THROWS_AS(learning_curves({}), ConfigError);
}

TEST_CASE("curve files") {
  testing::TempDir dir("curves");
  std::ofstream(dir / "h1.json") << history("dr", {{1, 0.6}, {2, 0.7}}).dump();
  std::ofstream(dir / "h2.json") << history("ml", {{1, 0.65}, {2, 0.6}}).dump();
  render_learning_curves({dir / "h1.json", dir / "h2.json"}, dir / "out");
  std::ifstream csv(dir / "out" / "curves.csv");
  std::string header, row;
  std::getline(csv, header);
  CHECK(header == "method,split,epoch,mean_auc");
  int rows = 0;
  while (std::getline(csv, row)) ++rows;
  CHECK(rows == 4);
  CHECK(std::filesystem::exists(dir / "out" / "curves.png"));
  std::ofstream(dir / "broken.json") << "{not json";
  CHECK_THROWS(render_learning_curves({dir / "broken.json"}, dir / "out"));
}
