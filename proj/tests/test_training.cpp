#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "drrff/error.hpp"
#include "drrff/training.hpp"

using namespace drrff;

namespace {

const TrainData& toy_data() {
  static const TrainData data = make_train_data(testing::small_split(3, 8, 21));
  return data;
}

TrainConfig toy_config(Method method) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.batch_size = 8;
  cfg.epochs = 1;
  cfg.eval_every = 0;
  cfg.seed = 5;
  return cfg;
}

double max_param_deviation(const ParamList<float>& a, const ParamList<float>& b) {
  double worst = 0;
  for (std::size_t k = 0; k < a.params.size(); ++k) {
    const auto& x = a.params[k].var->value();
    const auto& y = b.params[k].var->value();
    for (std::size_t e = 0; e < x.size(); ++e) worst = std::max(worst, std::fabs(static_cast<double>(x[e]) - y[e]));
  }
  return worst;
}

bool any_grad(const ParamList<float>& list) {
  for (const auto& p : list.params) {
    if (p.var->has_grad()) {
      for (float g : p.var->grad().values())
        if (g != 0.0f) return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("background permutation has no fixed points") {
  Rng rng(1);
  for (int n = 2; n < 40; ++n) {
    const auto p = background_permutation(n, rng);
    REQUIRE(p.size() == static_cast<std::size_t>(n));
    CHECK(std::set<int>(p.begin(), p.end()).size() == p.size());
    for (int i = 0; i < n; ++i) CHECK(p[static_cast<std::size_t>(i)] != i);
  }
  CHECK(background_permutation(1, rng) == std::vector<int>{0});
  CHECK(background_permutation(0, rng).empty());
}

TEST_CASE("epoch batches cover the data once and drop a singleton tail") {
  const auto b = epoch_batches(21, 5, 3, 1);
  REQUIRE(b.size() == 4);
  std::set<int> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 20);
  CHECK(epoch_batches(21, 5, 3, 1) == b);
  CHECK(epoch_batches(21, 5, 3, 2) != b);
  CHECK(epoch_batches(22, 5, 3, 1).back().size() == 2);
}

TEST_CASE("training data labels follow ascending device id") {
  const TrainData& d = toy_data();
  CHECK(d.num_classes() == 3);
  CHECK(d.device_ids == std::vector<int>{0, 1, 2});
  CHECK(d.images.shape() == Shape{24, 2, 16, 80});
  CHECK_THROWS_AS(make_train_data(testing::small_split(1, 4, 2)), ConfigError);
}

TEST_CASE("each step touches only its own networks") {
  const TrainConfig cfg = toy_config(Method::kDr);
  TrainState s(testing::small_model_config(3), cfg);
  const ParamList<float> fw = s.nets.fw_params();
  const ParamList<float> qg = s.nets.qg_params();
  for (const auto& idx : epoch_batches(toy_data().size(), cfg.batch_size, cfg.seed, 1)) {
    const Batch b = make_raw_batch(toy_data(), idx);
    const auto fw0 = param_hash(fw, true), qg0 = param_hash(qg, false);
    Rng r1(7);
    qg_step(s, b, cfg, r1);
    CHECK(param_hash(fw, true) == fw0);
    CHECK(param_hash(qg, false) != qg0);
    CHECK_FALSE(any_grad(fw));

    const auto fw1 = param_hash(fw, false), qg1 = param_hash(qg, true);
    Rng r2(8);
    f_step(s, b, cfg, r2);
    CHECK(param_hash(qg, true) == qg1);
    CHECK(param_hash(fw, false) != fw1);
    CHECK_FALSE(any_grad(qg));
  }
}

TEST_CASE("zero learning rate leaves Q and G unchanged") {
  TrainConfig cfg = toy_config(Method::kDr);
  cfg.learning_rate = 0.0;
  TrainState s(testing::small_model_config(3), cfg);
  const auto before = param_hash(s.nets.qg_params());
  Rng rng(3);
  qg_step(s, make_raw_batch(toy_data(), {0, 5, 9, 14}), cfg, rng);
  CHECK(param_hash(s.nets.qg_params()) == before);
  CHECK_NOTHROW(cfg.validate());  // allowed, so a run can be frozen on purpose
  cfg.learning_rate = -1e-3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("a single Q parameter gradient matches a finite difference") {
  Networks<double> nets(testing::small_model_config(3), 4);
  const Tensor<float> xf = make_raw_batch(toy_data(), {0, 8, 16, 3}).x;
  const Tensor<double> x = xf.cast<double>();
  const std::vector<int> labels{0, 1, 2, 0};
  Rng rng(5);
  const Tensor<double> noise = nets.Q.sample_noise(4, rng);
  LossConfig loss;
  const ParamList<double> q = [&] {
    ParamList<double> l;
    nets.Q.collect("Q", l);
    return l;
  }();
  ParamList<double> all = nets.all_params();
  all.set_requires_grad(false);
  q.set_requires_grad(true);
  qg_objective(nets, x, labels, noise, loss).backward();
  // A handful of entries from different layers of Q.
  for (std::size_t k : {std::size_t{0}, q.params.size() / 2, q.params.size() - 2}) {
    Var<double>& v = *q.params[k].var;
    CAPTURE(q.params[k].name);
    REQUIRE(v.has_grad());
    const double analytic = v.grad()[0];
    const double orig = v.value()[0];
    const double h = 1e-7;  // small enough to stay clear of activation kinks
    v.mutable_value()[0] = orig + h;
    const double up = qg_objective(nets, x, labels, noise, loss).value().item();
    v.mutable_value()[0] = orig - h;
    const double down = qg_objective(nets, x, labels, noise, loss).value().item();
    v.mutable_value()[0] = orig;
    const double numeric = (up - down) / (2 * h);
    CHECK(std::fabs(analytic - numeric) / std::max(std::fabs(analytic) + std::fabs(numeric), 1e-8) < 1e-3);
  }
}

TEST_CASE("f objective sends no gradient to Q or G") {
  Networks<double> nets(testing::small_model_config(3), 6);
  const Tensor<double> x = make_raw_batch(toy_data(), {1, 9, 17, 4}).x.cast<double>();
  const std::vector<int> labels{0, 1, 2, 0}, perm{1, 2, 3, 0};
  Rng rng(7);
  const Tensor<double> noise = nets.Q.sample_noise(4, rng);
  nets.all_params().set_requires_grad(true);
  f_objective(nets, x, labels, perm, noise, LossConfig{}).backward();
  for (const auto& p : nets.qg_params().params) {
    if (p.var->has_grad()) {
      for (double g : p.var->grad().values()) CHECK(g == 0.0);
    }
  }
}

TEST_CASE("dr with lambda 1 and alpha 0 follows the ml trajectory") {
  TrainConfig dr = toy_config(Method::kDr);
  dr.loss.lambda = 1.0;
  dr.loss.alpha = 0.0;
  dr.epochs = 4;  // 3 batches per epoch: 12 steps
  TrainConfig ml = dr;
  ml.method = Method::kMl;
  const auto a = train(toy_data(), testing::small_model_config(3), dr);
  const auto b = train(toy_data(), testing::small_model_config(3), ml);
  CHECK(a->global_step == 12);
  CHECK(max_param_deviation(a->nets.fw_params(), b->nets.fw_params()) < 1e-6);
}

TEST_CASE("awgn with augmentation disabled matches ml") {
  TrainConfig awgn = toy_config(Method::kAwgn);
  awgn.augment.enabled = false;
  TrainConfig ml = toy_config(Method::kMl);
  const auto a = train(toy_data(), testing::small_model_config(3), awgn);
  const auto b = train(toy_data(), testing::small_model_config(3), ml);
  CHECK(param_hash(a->nets.fw_params(), true) == param_hash(b->nets.fw_params(), true));
  awgn.augment.enabled = true;
  const auto c = train(toy_data(), testing::small_model_config(3), awgn);
  CHECK(param_hash(c->nets.fw_params()) != param_hash(b->nets.fw_params()));
}

TEST_CASE("zero epochs returns the initialization") {
  TrainConfig cfg = toy_config(Method::kDr);
  cfg.epochs = 0;
  const auto s = train_dr(toy_data(), testing::small_model_config(3), cfg);
  Networks<float> init(testing::small_model_config(3), Rng::derive(cfg.seed, "init"));
  CHECK(param_hash(s->nets.all_params(), true) == param_hash(init.all_params(), true));
  CHECK(s->loss_history.empty());
  CHECK(s->eval_history.empty());
}

TEST_CASE("training is deterministic in the seed") {
  TrainConfig cfg = toy_config(Method::kDr);
  cfg.epochs = 2;
  int evals = 0;
  const EvalHook hook = [&](TrainState&) {
    ++evals;
    return std::map<std::string, double>{{"val", 0.5}};
  };
  cfg.eval_every = 1;
  const auto a = train_dr(toy_data(), testing::small_model_config(3), cfg, hook);
  const auto b = train_dr(toy_data(), testing::small_model_config(3), cfg);
  CHECK(history_to_json(*a)["loss_history"] == history_to_json(*b)["loss_history"]);
  REQUIRE(a->loss_history.size() == 2);
  CHECK(a->loss_history[0].epoch == 1);
  CHECK(a->loss_history[1].epoch == 2);
  CHECK(std::isfinite(a->loss_history[1].L_v));
  CHECK(evals == 2);
  CHECK(a->eval_history.size() == 2);
  CHECK(param_hash(a->nets.all_params(), true) == param_hash(b->nets.all_params(), true));
  CHECK_THROWS_AS(train_baseline(toy_data(), testing::small_model_config(3), cfg), ConfigError);
  CHECK_THROWS_AS(train(toy_data(), testing::small_model_config(4), cfg), ConfigError);
}

TEST_CASE("ml drives the loss down on a separable toy task") {
  // Two devices with very different carrier offsets are trivially separable.
  DatasetConfig dc = DatasetConfig::desk_default();
  dc.num_devices = 2;
  dc.num_unknown_devices = 0;
  dc.profiles = {DeviceProfile::identity(0), DeviceProfile::identity(1)};
  dc.profiles[1].cfo = 25000.0;
  SplitConfig split = dc.split("train");
  split.per_device = 16;
  const TrainData data = make_train_data(generate_split(dc, split, 3));
  TrainConfig cfg = toy_config(Method::kMl);
  cfg.epochs = 25;
  const auto s = train_baseline(data, testing::small_model_config(2), cfg);
  CHECK(s->loss_history.back().L_F < 0.01);
  CHECK(std::isnan(s->loss_history.back().L_v));
}

TEST_CASE("outputs record the method verbatim") {
  TrainConfig cfg = toy_config(Method::kFir);
  const auto s = train(toy_data(), testing::small_model_config(3), cfg);
  testing::TempDir dir("train_out");
  write_training_outputs(dir.path(), *s, train_config_to_json(cfg), cfg.seed);
  CHECK(checkpoint_groups(dir / "model") == std::vector<std::string>{"F", "W"});
  CHECK(read_checkpoint_meta(dir / "model").config["method"] == "fir");
  CHECK(history_to_json(*s)["method"] == "fir");
  CHECK(std::filesystem::exists(dir / "history.json"));
  CHECK(train_config_to_json(train_config_from_json(train_config_to_json(cfg))) == train_config_to_json(cfg));
  CHECK_THROWS_AS(parse_method("sgd"), ConfigError);
}
