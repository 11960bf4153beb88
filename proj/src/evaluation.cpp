#include "drrff/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "drrff/error.hpp"
#include "drrff/preprocessing.hpp"

namespace drrff {
namespace {

using json = nlohmann::json;

void require_scores(const ScoreSet& s) {
  if (s.genuine.empty() || s.impostor.empty()) {
    throw DegenerateError("score set needs at least one genuine and one impostor pair");
  }
}

// Cumulative accepted counts at each distinct threshold, ascending.
struct CountCurve {
  std::vector<double> thresholds;
  std::vector<std::int64_t> tp;  // genuine pairs with score <= threshold
  std::vector<std::int64_t> fp;  // impostor pairs with score <= threshold
};

CountCurve count_curve(const ScoreSet& s) {
  std::vector<std::pair<double, bool>> all;
  all.reserve(s.genuine.size() + s.impostor.size());
  for (double v : s.genuine) all.emplace_back(v, true);
  for (double v : s.impostor) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  CountCurve c;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double t = all[i].first;
    for (; i < all.size() && all[i].first == t; ++i) (all[i].second ? tp : fp) += 1;
    c.thresholds.push_back(t);
    c.tp.push_back(tp);
    c.fp.push_back(fp);
  }
  return c;
}

}  // namespace

std::vector<Embedding> extract_embeddings(Extractor<float>& F, const Dataset& ds, int chunk) {
  if (chunk < 1) throw ConfigError("chunk must be >= 1");
  std::vector<Embedding> out;
  out.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(ds.size(), start + static_cast<std::size_t>(chunk));
    std::vector<int> idx(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    const Tensor<float> x = make_batch(ds.signals, idx);
    const Var<float> z = F.forward(Var<float>::constant(x), NormMode::kRunning);
    const int d = z.shape()[1];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Embedding e;
      e.z.assign(z.value().data() + i * d, z.value().data() + (i + 1) * d);
      e.device_id = ds.manifest.records[start + i].device_id;
      e.channel_tag = ds.manifest.records[start + i].channel_tag;
      out.push_back(std::move(e));
    }
  }
  return out;
}

ScoreSet pairwise_scores(const std::vector<Embedding>& emb) {
  if (emb.size() < 2) throw DegenerateError("pairwise scoring needs at least two embeddings");
  std::set<int> devices;
  for (const auto& e : emb) devices.insert(e.device_id);
  if (devices.size() < 2) throw DegenerateError("all embeddings share one device: no impostor pairs");
  ScoreSet s;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      const double d = cosine_distance<float>(emb[i].z, emb[j].z);
      (emb[i].device_id == emb[j].device_id ? s.genuine : s.impostor).push_back(d);
    }
  }
  return s;
}

RocResult roc_auc(const ScoreSet& scores) {
  require_scores(scores);
  const CountCurve c = count_curve(scores);
  const auto ng = static_cast<std::int64_t>(scores.genuine.size());
  const auto ni = static_cast<std::int64_t>(scores.impostor.size());
  RocResult r;
  r.curve.points.push_back({0.0, 0.0});
  // Twice the trapezoid area in count units: sum (tp_k + tp_{k-1}) (fp_k - fp_{k-1}).
  std::int64_t area2 = 0;
  std::int64_t prev_tp = 0, prev_fp = 0;
  for (std::size_t k = 0; k < c.thresholds.size(); ++k) {
    area2 += (c.tp[k] + prev_tp) * (c.fp[k] - prev_fp);
    prev_tp = c.tp[k];
    prev_fp = c.fp[k];
    r.curve.points.push_back({static_cast<double>(c.fp[k]) / static_cast<double>(ni),
                              static_cast<double>(c.tp[k]) / static_cast<double>(ng)});
    r.curve.thresholds.push_back(c.thresholds[k]);
  }
  r.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(ng) * static_cast<double>(ni));
  return r;
}

double eer(const ScoreSet& scores) {
  require_scores(scores);
  const CountCurve c = count_curve(scores);
  const double ng = static_cast<double>(scores.genuine.size());
  const double ni = static_cast<double>(scores.impostor.size());
  // Start below every score: nothing accepted, FNR = 1, FPR = 0.
  double prev_fpr = 0.0, prev_fnr = 1.0;
  for (std::size_t k = 0; k < c.thresholds.size(); ++k) {
    const double fpr = static_cast<double>(c.fp[k]) / ni;
    const double fnr = static_cast<double>(static_cast<double>(ng) - static_cast<double>(c.tp[k])) / ng;
    if (fnr <= fpr) {
      const double d_prev = prev_fnr - prev_fpr;
      const double d_cur = fnr - fpr;
      if (d_cur == 0.0) return fpr;
      const double t = d_prev / (d_prev - d_cur);
      return prev_fpr + t * (fpr - prev_fpr);
    }
    prev_fpr = fpr;
    prev_fnr = fnr;
  }
  return prev_fpr;  // unreachable: at the largest threshold FNR = 0
}

SplitMetrics score_metrics(const ScoreSet& scores) {
  SplitMetrics m;
  RocResult r = roc_auc(scores);
  m.auc = r.auc;
  m.roc = std::move(r.curve);
  m.eer = eer(scores);
  m.n_genuine = scores.genuine.size();
  m.n_impostor = scores.impostor.size();
  return m;
}

SplitMetrics evaluate_split(Extractor<float>& F, const Dataset& ds) {
  const std::vector<Embedding> emb = extract_embeddings(F, ds);
  SplitMetrics m = score_metrics(pairwise_scores(emb));
  std::map<std::string, std::vector<Embedding>> by_tag;
  for (const auto& e : emb) by_tag[e.channel_tag].push_back(e);
  for (const auto& [tag, group] : by_tag) {
    std::set<int> devices;
    for (const auto& e : group) devices.insert(e.device_id);
    if (group.size() < 2 || devices.size() < 2) continue;
    const ScoreSet s = pairwise_scores(group);
    if (s.genuine.empty()) continue;
    m.per_tag[tag] = score_metrics(s);
  }
  return m;
}

json metrics_to_json(const SplitMetrics& m) {
  json j{{"auc", m.auc}, {"eer", m.eer}, {"n_genuine", m.n_genuine}, {"n_impostor", m.n_impostor}};
  if (!m.per_tag.empty()) {
    json tags = json::object();
    for (const auto& [tag, t] : m.per_tag) {
      tags[tag] = {{"auc", t.auc}, {"eer", t.eer}, {"n_genuine", t.n_genuine}, {"n_impostor", t.n_impostor}};
    }
    j["per_tag"] = tags;
  }
  return j;
}

void write_metrics(const std::filesystem::path& dir, const SplitMetrics& m) {
  std::filesystem::create_directories(dir);
  std::ofstream js(dir / "metrics.json");
  if (!js) throw IoError("cannot write " + (dir / "metrics.json").string());
  js << metrics_to_json(m).dump(2) << '\n';
  std::ofstream csv(dir / "roc.csv");
  if (!csv) throw IoError("cannot write " + (dir / "roc.csv").string());
  csv.precision(17);
  csv << "fpr,tpr\n";
  for (const auto& p : m.roc.points) csv << p.fpr << ',' << p.tpr << '\n';
}

double classifier_accuracy(Networks<float>& nets, const TrainData& data, double delta, bool backgrounds,
                           std::uint64_t noise_seed, int chunk) {
  if (data.size() == 0) throw DegenerateError("classifier_accuracy on empty data");
  Rng rng(noise_seed);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(chunk));
    std::vector<int> idx(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    const Batch b = make_raw_batch(data, idx);
    Var<float> x = Var<float>::constant(b.x);
    if (backgrounds) x = nets.Q.forward(x, nets.Q.sample_noise(static_cast<int>(idx.size()), rng), NormMode::kRunning);
    const Var<float> logits = nets.W.logits(nets.F.forward(x, NormMode::kRunning), static_cast<float>(delta));
    const int k = logits.shape()[1];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = logits.value().data() + i * k;
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      if (pred == b.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw DegenerateError("box_stats of an empty list");
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {values.front(), quantile(0.25), quantile(0.5), quantile(0.75), values.back()};
}

std::vector<SweepRow> sweep(const std::string& param, const std::vector<double>& values, int repeats,
                            const TrainData& data, const ModelConfig& model, const TrainConfig& base,
                            const Dataset& eval_split) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (repeats < 1) throw ConfigError("sweep repeats must be >= 1");
  if (param != "lambda" && param != "alpha" && param != "beta") {
    throw ConfigError("sweep parameter must be lambda, alpha or beta, got '" + param + "'");
  }
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.value = v;
    for (int r = 0; r < repeats; ++r) {
      TrainConfig cfg = base;
      cfg.eval_every = 0;
      cfg.seed = base.seed + static_cast<std::uint64_t>(r);
      if (param == "lambda") cfg.loss.lambda = v;
      if (param == "alpha") cfg.loss.alpha = v;
      if (param == "beta") cfg.loss.beta = v;
      auto state = train(data, model, cfg);
      row.aucs.push_back(evaluate_split(state->nets.F, eval_split).auc);
    }
    row.stats = box_stats(row.aucs);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream csv(path);
  if (!csv) throw IoError("cannot write " + path.string());
  csv.precision(17);
  csv << "param_value,min,q1,median,q3,max\n";
  for (const auto& r : rows) {
    csv << r.value << ',' << r.stats.min << ',' << r.stats.q1 << ',' << r.stats.median << ',' << r.stats.q3 << ','
        << r.stats.max << '\n';
  }
}

}  // namespace drrff
