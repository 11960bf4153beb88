#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "drrff/dataset.hpp"
#include "drrff/error.hpp"
#include "drrff/signal_sim.hpp"

using namespace drrff;

namespace {

double energy(const ComplexSignal& x) {
  double e = 0;
  for (auto v : x.samples) e += std::norm(v);
  return e;
}

ComplexSignal constant_signal(std::complex<double> v, std::size_t n) {
  ComplexSignal s;
  s.samples.assign(n, v);
  return s;
}

}  // namespace

TEST_CASE("preamble has 1280 samples of eight identical symbols") {
  const ComplexSignal s = gen_preamble();
  REQUIRE(s.size() == 1280);
  CHECK(s.sample_rate == doctest::Approx(1e7));
  for (int sym = 1; sym < 8; ++sym) {
    for (int k = 0; k < 160; ++k) CHECK(s.samples[sym * 160 + k] == s.samples[k]);
  }
}

TEST_CASE("preamble has a unit envelope away from symbol edges") {
  const ComplexSignal s = gen_preamble();
  double peak = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    peak = std::max(peak, std::abs(s.samples[k]));
    const std::size_t pos = k % 160;
    if (pos >= 5 && pos < 155) CHECK(std::abs(s.samples[k]) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(peak == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("preamble rejects impossible dimensions") {
  CHECK_THROWS_AS(gen_preamble(1e7, 32, 5, 0), ConfigError);
  CHECK_THROWS_AS(gen_preamble(1e7, 0, 5, 8), ConfigError);
}

TEST_CASE("identity device profile is the identity map") {
  const ComplexSignal s = gen_preamble();
  const ComplexSignal out = apply_device(s, DeviceProfile::identity(3));
  CHECK(out.samples == s.samples);
}

TEST_CASE("cfo rotates sample 25 by a quarter turn at 100 kHz") {
  const ComplexSignal s = gen_preamble();
  DeviceProfile p = DeviceProfile::identity();
  p.cfo = 1e5;
  const ComplexSignal out = apply_device(s, p);
  // Oracle: 2*pi*1e5*25/1e7 = pi/2, so the sample is multiplied by j.
  const std::complex<double> expected = s.samples[25] * std::complex<double>(0.0, 1.0);
  CHECK(std::abs(out.samples[25] - expected) < 1e-12);
  for (std::size_t k = 0; k < s.size(); k += 97) {
    const double phase = 2 * std::numbers::pi * 1e5 * static_cast<double>(k) / 1e7;
    CHECK(std::abs(out.samples[k] - s.samples[k] * std::polar(1.0, phase)) < 1e-9);
  }
}

TEST_CASE("cfo alone preserves energy") {
  const ComplexSignal s = gen_preamble();
  DeviceProfile p = DeviceProfile::identity();
  p.cfo = -23456.0;
  const ComplexSignal out = apply_device(s, p);
  CHECK(std::fabs(energy(out) - energy(s)) / energy(s) < 1e-9);
}

TEST_CASE("cubic pa compresses a unit constant input to 0.9") {
  const std::complex<double> u = std::polar(1.0, 0.3);
  DeviceProfile p = DeviceProfile::identity();
  p.pa_a3 = {-0.1, 0.0};
  const ComplexSignal out = apply_device(constant_signal(u, 64), p);
  for (auto v : out.samples) CHECK(std::abs(v - 0.9 * u) < 1e-12);
}

TEST_CASE("iq imbalance and dc follow the documented formulas") {
  const ComplexSignal s = gen_preamble();
  DeviceProfile p = DeviceProfile::identity();
  p.iq_gain_mismatch = 0.04;
  p.iq_phase_mismatch = 0.03;
  p.dc_offset = {0.005, -0.002};
  const ComplexSignal out = apply_device(s, p);
  for (std::size_t k = 0; k < s.size(); k += 37) {
    const double i = (1 + 0.04) * s.samples[k].real();
    const double q = s.samples[k].imag() * std::cos(0.03) + s.samples[k].real() * std::sin(0.03);
    CHECK(std::abs(out.samples[k] - (std::complex<double>(i, q) + p.dc_offset)) < 1e-12);
  }
}

TEST_CASE("noiseless awgn and single-tap fir are identities") {
  const ComplexSignal s = gen_preamble();
  Rng rng(5);
  ChannelSpec awgn;
  CHECK(apply_channel(s, awgn, rng).samples == s.samples);
  ChannelSpec fir;
  fir.kind = ChannelKind::kMultipathFir;
  fir.num_taps = 1;
  CHECK(apply_channel(s, fir, rng).samples == s.samples);
}

TEST_CASE("awgn at 20 dB adds noise at one percent of signal power") {
  const ComplexSignal s = constant_signal(std::polar(0.7, 1.1), 100000);
  Rng rng(11);
  ChannelSpec c;
  c.snr_db = 20.0;
  const ComplexSignal out = apply_channel(s, c, rng);
  double noise = 0;
  for (std::size_t k = 0; k < s.size(); ++k) noise += std::norm(out.samples[k] - s.samples[k]);
  noise /= static_cast<double>(s.size());
  const double target = 0.49 / 100.0;
  CHECK(std::fabs(noise - target) / target < 0.05);
}

TEST_CASE("fir taps have unit total power and channels differ per draw") {
  Rng rng(2);
  for (int n : {2, 3, 5}) {
    const auto taps = draw_fir_taps(n, 0.5, 0.0, rng);
    double p = 0;
    for (auto t : taps) p += std::norm(t);
    CHECK(p == doctest::Approx(1.0));
  }
  const ComplexSignal s = gen_preamble();
  ChannelSpec c;
  c.kind = ChannelKind::kMultipathFir;
  c.num_taps = 5;
  CHECK(apply_channel(s, c, rng).samples != apply_channel(s, c, rng).samples);
}

TEST_CASE("rician flat channel keeps the signal finite and changes it") {
  const ComplexSignal s = gen_preamble();
  Rng rng(8);
  ChannelSpec c;
  c.kind = ChannelKind::kRicianFlat;
  c.rician_k = 3.0;
  c.snr_db = 25.0;
  const ComplexSignal out = apply_channel(s, c, rng);
  CHECK(out.all_finite());
  CHECK(out.samples != s.samples);
}

TEST_CASE("channel spec validation") {
  ChannelSpec c;
  c.num_taps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.num_taps = 1;
  c.rician_k = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("distinct default devices leave distinct fingerprints") {
  DeviceDistribution dist;
  Rng r1(Rng::derive(1, "device", 0)), r2(Rng::derive(1, "device", 1));
  const DeviceProfile a = draw_device_profile(0, dist, r1);
  const DeviceProfile b = draw_device_profile(1, dist, r2);
  const ComplexSignal s = gen_preamble();
  const ComplexSignal xa = apply_device(s, a), xb = apply_device(s, b);
  double diff = 0;
  for (std::size_t k = 0; k < s.size(); ++k) diff += std::abs(xa.samples[k] - xb.samples[k]);
  CHECK(diff / static_cast<double>(s.size()) > 1e-3);
}

TEST_CASE("desk dataset has 1600 training records with labels 0..7") {
  const DatasetConfig cfg = DatasetConfig::desk_default();
  const Dataset ds = generate_split(cfg, cfg.split("train"), 4);
  REQUIRE(ds.size() == 1600);
  std::map<int, int> counts;
  for (std::size_t i = 0; i < ds.size(); ++i) ++counts[ds.device_id(i)];
  REQUIRE(counts.size() == 8);
  for (const auto& [id, n] : counts) {
    CHECK(id >= 0);
    CHECK(id < 8);
    CHECK(n == 200);
  }
  ds.manifest.validate();
  for (const auto& s : ds.signals) {
    CHECK(s.size() == 1280);
    CHECK(s.all_finite());
  }
}

TEST_CASE("unknown-device split uses only held-out ids") {
  const DatasetConfig cfg = DatasetConfig::desk_default();
  const Dataset ds = generate_split(cfg, cfg.split("test_unknown_multipath"), 4);
  const std::vector<int> all = ds.device_ids();
  const std::set<int> ids(all.begin(), all.end());
  CHECK(ids.size() == 5);
  for (int id : ids) CHECK(id >= 8);
}

TEST_CASE("gen_dataset is byte-reproducible and round-trips through disk") {
  DatasetConfig cfg = DatasetConfig::desk_default();
  for (auto& s : cfg.splits) s.per_device = 3;
  testing::TempDir a("gen_a"), b("gen_b");
  const auto first = gen_dataset(cfg, 9, a.path());
  gen_dataset(cfg, 9, b.path());
  REQUIRE(first.size() == 4);
  for (const auto& ds : first) {
    for (const std::string ext : {".iq", ".manifest.json"}) {
      const auto rel = std::filesystem::path(ds.name) / (ds.name + ext);
      CHECK(testing::read_bytes(a.path() / rel) == testing::read_bytes(b.path() / rel));
    }
    const Dataset back = read_dataset(a.path() / ds.name);
    CHECK(back.manifest == ds.manifest);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.signals[i].samples == ds.signals[i].samples);
  }
}

TEST_CASE("different seeds give different data") {
  const DatasetConfig cfg = DatasetConfig::desk_default();
  const Dataset a = generate_split(cfg, cfg.split("val"), 1);
  const Dataset b = generate_split(cfg, cfg.split("val"), 2);
  CHECK(a.signals[0].samples != b.signals[0].samples);
}

TEST_CASE("manifest validation catches misaligned offsets and duplicate explicit ids") {
  DatasetManifest m;
  m.num_devices = 1;
  m.records = {{0, "t", 0}, {0, "t", 100}};
  CHECK_THROWS(m.validate());

  DatasetConfig cfg = DatasetConfig::desk_default();
  cfg.num_devices = 2;
  cfg.profiles = {DeviceProfile::identity(0), DeviceProfile::identity(0)};
  CHECK_THROWS_AS(device_population(cfg, 1), ConfigError);
}

TEST_CASE("dataset config survives a json round trip") {
  DatasetConfig cfg = DatasetConfig::desk_default();
  cfg.profiles = {DeviceProfile::identity(0)};
  cfg.profiles[0].pa_a3 = {0.01, -0.02};
  cfg.num_devices = 1;
  const DatasetConfig back = dataset_config_from_json(dataset_config_to_json(cfg));
  CHECK(dataset_config_to_json(back) == dataset_config_to_json(cfg));
}
