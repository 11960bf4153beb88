#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "drrff/dataset.hpp"
#include "drrff/models.hpp"
#include "drrff/training.hpp"

namespace drrff {

struct Embedding {
  std::vector<float> z;
  int device_id = 0;
  std::string channel_tag;
};

// Inference-mode F on every record, preprocessed, in chunks of `chunk` records.
std::vector<Embedding> extract_embeddings(Extractor<float>& F, const Dataset& ds, int chunk = 64);

// Cosine distances of same-device (genuine) and cross-device (impostor) pairs.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

// All n(n-1)/2 unordered pairs. Throws DegenerateError with fewer than two
// embeddings or fewer than two distinct devices.
ScoreSet pairwise_scores(const std::vector<Embedding>& emb);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// Pairs with distance <= threshold are accepted as same-device. Points start
// at (0, 0) and add one point per distinct score value, ending at (1, 1).
struct RocCurve {
  std::vector<RocPoint> points;
  std::vector<double> thresholds;  // thresholds[k] produced points[k + 1]
};

struct RocResult {
  RocCurve curve;
  double auc = 0.0;
};

// Throws DegenerateError if either list is empty.
RocResult roc_auc(const ScoreSet& scores);
// Rate where FNR and FPR cross, linearly interpolated between the bracketing
// thresholds.
double eer(const ScoreSet& scores);

struct SplitMetrics {
  double auc = 0.0;
  double eer = 0.0;
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
  RocCurve roc;
  // Pairs whose records share a channel tag, per tag (only tags with both pair kinds).
  std::map<std::string, SplitMetrics> per_tag;
};

SplitMetrics score_metrics(const ScoreSet& scores);
SplitMetrics evaluate_split(Extractor<float>& F, const Dataset& ds);

nlohmann::json metrics_to_json(const SplitMetrics& m);
// Writes <dir>/metrics.json and <dir>/roc.csv (fpr,tpr).
void write_metrics(const std::filesystem::path& dir, const SplitMetrics& m);

// Fraction of records whose arg-max class probability is the true label.
// With `backgrounds` the classifier sees Q(x, n) instead of x.
double classifier_accuracy(Networks<float>& nets, const TrainData& data, double delta, bool backgrounds,
                           std::uint64_t noise_seed, int chunk = 64);

// Five-number summary with linearly interpolated quartiles.
struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};
BoxStats box_stats(std::vector<double> values);

struct SweepRow {
  double value = 0.0;
  std::vector<double> aucs;
  BoxStats stats;
};

// Trains `repeats` models (seeds base.seed + r) per value of `param`
// (lambda, alpha or beta) and scores each on `eval_split`.
std::vector<SweepRow> sweep(const std::string& param, const std::vector<double>& values, int repeats,
                            const TrainData& data, const ModelConfig& model, const TrainConfig& base,
                            const Dataset& eval_split);
// Columns: param_value,min,q1,median,q3,max
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace drrff
