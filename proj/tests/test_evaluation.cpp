#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

#include "drrff/error.hpp"
#include "drrff/evaluation.hpp"

using namespace drrff;

namespace {

Embedding emb(std::vector<float> z, int device) { return {std::move(z), device, "t"}; }

}  // namespace

TEST_CASE("worked roc example") {
  const ScoreSet s{{0.1, 0.2}, {0.15, 0.3}};
  CHECK(roc_auc(s).auc == 0.75);
  CHECK(eer(s) == 0.5);
  CHECK(roc_auc({{0.1, 0.2}, {0.3, 0.4}}).auc == 1.0);
  CHECK(roc_auc({{0.5, 0.6}, {0.3, 0.4}}).auc == 0.0);
  CHECK(eer({{0.1, 0.2}, {0.3, 0.4}}) == 0.0);
  CHECK(eer({{0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(roc_auc({{}, {0.1}}), DegenerateError);
  CHECK_THROWS_AS(eer({{0.1}, {}}), DegenerateError);
}

TEST_CASE("auc and eer agree with brute force on random score sets") {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const ScoreSet s = testing::random_scores(rng);
    CAPTURE(t);
    const RocResult r = roc_auc(s);
    CHECK(r.auc == testing::oracle_auc(s));
    CHECK(eer(s) == doctest::Approx(testing::oracle_eer(s)).epsilon(1e-12));

    // the curve is monotone and runs from (0, 0) to (1, 1)
    CHECK(r.curve.points.front().fpr == 0.0);
    CHECK(r.curve.points.front().tpr == 0.0);
    CHECK(r.curve.points.back().fpr == 1.0);
    CHECK(r.curve.points.back().tpr == 1.0);
    CHECK(r.curve.thresholds.size() + 1 == r.curve.points.size());
    for (std::size_t k = 1; k < r.curve.points.size(); ++k) {
      CHECK(r.curve.points[k].fpr >= r.curve.points[k - 1].fpr);
      CHECK(r.curve.points[k].tpr >= r.curve.points[k - 1].tpr);
    }
  }
}

TEST_CASE("pairwise scores enumerate unordered pairs") {
  const std::vector<Embedding> e{emb({1, 0}, 0), emb({1, 1}, 0), emb({0, 1}, 1), emb({-1, 0}, 1)};
  const ScoreSet s = pairwise_scores(e);
  CHECK(s.genuine.size() == 2);
  CHECK(s.impostor.size() == 4);
  CHECK(std::find_if(s.genuine.begin(), s.genuine.end(),
                     [](double v) { return std::fabs(v - (1 - std::sqrt(0.5))) < 1e-9; }) != s.genuine.end());
  CHECK(std::count(s.impostor.begin(), s.impostor.end(), 2.0) == 1);
  CHECK_THROWS_AS(pairwise_scores({emb({1, 0}, 0), emb({0, 1}, 0)}), DegenerateError);
  CHECK_THROWS_AS(pairwise_scores({emb({1, 0}, 0)}), DegenerateError);
}

TEST_CASE("box statistics use interpolated quartiles") {
  const BoxStats b = box_stats({0.98, 0.9, 0.94, 0.92, 0.96});
  CHECK(b.min == 0.9);
  CHECK(b.median == doctest::Approx(0.94));
  CHECK(b.max == 0.98);
  CHECK(b.q1 == doctest::Approx(0.92));
  CHECK(b.q3 == doctest::Approx(0.96));
  const BoxStats c = box_stats({1, 2, 3, 4});
  CHECK(c.median == doctest::Approx(2.5));
  CHECK(c.q1 == doctest::Approx(1.75));
  CHECK_THROWS(box_stats({}));
}

TEST_CASE("embeddings are deterministic per record") {
  Networks<float> nets(testing::small_model_config(2), 2);
  Dataset ds = testing::small_split(2, 3, 3, "val");
  ds.signals.push_back(ds.signals[0]);
  ds.manifest.records.push_back(ds.manifest.records[0]);
  const auto e = extract_embeddings(nets.F, ds, 4);
  REQUIRE(e.size() == 7);
  CHECK(e.front().z.size() == 16);
  // Same record in a different batch: equal up to float summation order.
  for (std::size_t k = 0; k < 16; ++k) CHECK(e.front().z[k] == doctest::Approx(e.back().z[k]).epsilon(1e-5));
  CHECK(extract_embeddings(nets.F, ds, 4).front().z == e.front().z);
  CHECK(extract_embeddings(nets.F, Dataset{}).empty());
}

TEST_CASE("random extractor scores near chance") {
  const Dataset ds = testing::small_split(2, 30, 4, "val");
  double total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Networks<float> nets(testing::small_model_config(2), 100 + seed);
    const double auc = evaluate_split(nets.F, ds).auc;
    total += auc;
    CHECK(auc > 0.2);
    CHECK(auc < 0.8);
  }
  CHECK(std::fabs(total / 5 - 0.5) < 0.15);
}

TEST_CASE("split evaluation is repeatable and its roc csv has one row per point") {
  Networks<float> nets(testing::small_model_config(2), 5);
  const Dataset ds = testing::small_split(2, 8, 6, "val");
  const SplitMetrics a = evaluate_split(nets.F, ds);
  const SplitMetrics b = evaluate_split(nets.F, ds);
  CHECK(metrics_to_json(a) == metrics_to_json(b));
  CHECK(a.n_genuine == 2 * 28);
  CHECK(a.n_impostor == 64);

  testing::TempDir dir("metrics");
  write_metrics(dir.path(), a);
  std::ifstream csv(dir / "roc.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == static_cast<int>(a.roc.points.size()));
  CHECK(std::filesystem::exists(dir / "metrics.json"));
}
