#include "drrff/signal_sim.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "drrff/error.hpp"

namespace drrff {
namespace {

// IEEE 802.15.4 2.4 GHz chip sequence for data symbol 0 (c0 first).
constexpr std::array<int, 32> kSymbolZeroChips = {1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1,
                                                  0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0};

}  // namespace

bool ComplexSignal::all_finite() const {
  for (const auto& v : samples) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  }
  return true;
}

double ComplexSignal::mean_power() const {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& v : samples) acc += std::norm(v);
  return acc / static_cast<double>(samples.size());
}

void DeviceProfile::validate() const {
  if (device_id < 0) throw ConfigError("device_id must be non-negative");
  if (std::abs(pa_a1) == 0.0) throw ConfigError("pa_a1 must be nonzero");
}

DeviceProfile draw_device_profile(int device_id, const DeviceDistribution& dist, Rng& rng) {
  DeviceProfile p;
  p.device_id = device_id;
  p.iq_gain_mismatch = rng.normal(0.0, dist.iq_gain_std);
  p.iq_phase_mismatch = rng.normal(0.0, dist.iq_phase_std_deg * std::numbers::pi / 180.0);
  p.cfo = rng.uniform(-dist.cfo_max_hz, dist.cfo_max_hz);
  const double a3_mag = rng.uniform(dist.pa_a3_min, dist.pa_a3_max);
  const double a3_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.pa_a3 = std::polar(a3_mag, a3_phase);
  const double dc_mag = rng.uniform(0.0, dist.dc_max);
  const double dc_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.dc_offset = std::polar(dc_mag, dc_phase);
  return p;
}

std::string to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::kAwgn:
      return "awgn";
    case ChannelKind::kRicianFlat:
      return "rician_flat";
    case ChannelKind::kMultipathFir:
      return "multipath_fir";
  }
  return "unknown";
}

ChannelKind parse_channel_kind(const std::string& name) {
  if (name == "awgn") return ChannelKind::kAwgn;
  if (name == "rician_flat") return ChannelKind::kRicianFlat;
  if (name == "multipath_fir") return ChannelKind::kMultipathFir;
  throw ConfigError("unknown channel kind '" + name + "'");
}

void ChannelSpec::validate() const {
  if (std::isnan(snr_db)) throw ConfigError("snr_db is undefined");
  if (snr_db == -ChannelSpec::kNoiseless) throw ConfigError("snr_db cannot be -inf");
  if (num_taps < 1) throw ConfigError("num_taps must be >= 1");
  if (rician_k < 0.0) throw ConfigError("rician_k must be >= 0");
  if (pdp_decay < 0.0) throw ConfigError("pdp_decay must be >= 0");
}

ComplexSignal gen_preamble(double sample_rate, int chips_per_symbol, int samples_per_chip,
                           int num_symbols) {
  if (num_symbols < 1) throw ConfigError("num_symbols must be >= 1");
  if (chips_per_symbol != static_cast<int>(kSymbolZeroChips.size())) {
    throw ConfigError("chips_per_symbol must be 32 for the 802.15.4 zero symbol");
  }
  if (samples_per_chip < 1) throw ConfigError("samples_per_chip must be >= 1");
  if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be positive");

  const int symbol_len = chips_per_symbol * samples_per_chip;
  const int pulse_len = 2 * samples_per_chip;
  std::vector<std::complex<double>> symbol(symbol_len);
  for (int n = 0; n < chips_per_symbol; ++n) {
    const double b = kSymbolZeroChips[n] ? 1.0 : -1.0;
    const int start = n * samples_per_chip;
    for (int m = 0; m < pulse_len; ++m) {
      const double v = b * std::sin(std::numbers::pi * m / pulse_len);
      auto& dst = symbol[(start + m) % symbol_len];
      // even chips on I, odd chips on Q (offset by one chip)
      if (n % 2 == 0) {
        dst.real(dst.real() + v);
      } else {
        dst.imag(dst.imag() + v);
      }
    }
  }

  ComplexSignal s;
  s.sample_rate = sample_rate;
  s.samples.reserve(static_cast<std::size_t>(symbol_len) * num_symbols);
  for (int k = 0; k < num_symbols; ++k) s.samples.insert(s.samples.end(), symbol.begin(), symbol.end());
  return s;
}

ComplexSignal apply_device(const ComplexSignal& s, const DeviceProfile& p) {
  p.validate();
  if (!s.all_finite()) throw ConfigError("apply_device: input has non-finite samples");
  ComplexSignal out;
  out.sample_rate = s.sample_rate;
  out.samples.resize(s.size());
  const double cos_psi = std::cos(p.iq_phase_mismatch);
  const double sin_psi = std::sin(p.iq_phase_mismatch);
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::complex<double> u = s.samples[k];
    if (p.cfo != 0.0) {
      const double phase = 2.0 * std::numbers::pi * p.cfo * static_cast<double>(k) / s.sample_rate;
      u *= std::polar(1.0, phase);
    }
    const double i_branch = (1.0 + p.iq_gain_mismatch) * u.real();
    const double q_branch = u.imag() * cos_psi + u.real() * sin_psi;
    const std::complex<double> w(i_branch, q_branch);
    const std::complex<double> v = p.pa_a1 * w + p.pa_a3 * std::norm(w) * w;
    out.samples[k] = v + p.dc_offset;
  }
  return out;
}

std::vector<std::complex<double>> draw_fir_taps(int num_taps, double pdp_decay, double rician_k, Rng& rng) {
  if (num_taps < 1) throw ConfigError("num_taps must be >= 1");
  if (num_taps == 1 && rician_k == 0.0) return {std::complex<double>(1.0, 0.0)};
  std::vector<std::complex<double>> taps(num_taps);
  double power = 0.0;
  for (int l = 0; l < num_taps; ++l) {
    taps[l] = rng.complex_normal(std::exp(-l * pdp_decay));
    power += std::norm(taps[l]);
  }
  const double norm = std::sqrt(power);
  for (auto& t : taps) t /= norm;
  if (rician_k > 0.0) {
    // Deterministic line-of-sight component on the first tap.
    const double los = std::sqrt(rician_k / (rician_k + 1.0));
    const double nlos = std::sqrt(1.0 / (rician_k + 1.0));
    for (auto& t : taps) t *= nlos;
    taps[0] += los;
    double p2 = 0.0;
    for (const auto& t : taps) p2 += std::norm(t);
    const double n2 = std::sqrt(p2);
    for (auto& t : taps) t /= n2;
  }
  return taps;
}

ComplexSignal apply_fir(const ComplexSignal& x, const std::vector<std::complex<double>>& taps) {
  ComplexSignal out;
  out.sample_rate = x.sample_rate;
  out.samples.assign(x.size(), {0.0, 0.0});
  for (std::size_t k = 0; k < x.size(); ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t l = 0; l < taps.size() && l <= k; ++l) acc += taps[l] * x.samples[k - l];
    out.samples[k] = acc;
  }
  return out;
}

ComplexSignal apply_gain(const ComplexSignal& x, std::complex<double> gain) {
  ComplexSignal out = x;
  for (auto& v : out.samples) v *= gain;
  return out;
}

ComplexSignal add_awgn(const ComplexSignal& x, double snr_db, Rng& rng) {
  if (std::isnan(snr_db)) throw ConfigError("snr_db is undefined");
  if (snr_db == ChannelSpec::kNoiseless) return x;
  const double noise_var = x.mean_power() / std::pow(10.0, snr_db / 10.0);
  ComplexSignal out = x;
  for (auto& v : out.samples) v += rng.complex_normal(noise_var);
  return out;
}

ComplexSignal apply_channel(const ComplexSignal& x, const ChannelSpec& c, Rng& rng) {
  c.validate();
  switch (c.kind) {
    case ChannelKind::kAwgn:
      return add_awgn(x, c.snr_db, rng);
    case ChannelKind::kRicianFlat: {
      const double k = c.rician_k;
      const std::complex<double> h =
          std::sqrt(k / (k + 1.0)) + std::sqrt(1.0 / (k + 1.0)) * rng.complex_normal(1.0);
      return add_awgn(apply_gain(x, h), c.snr_db, rng);
    }
    case ChannelKind::kMultipathFir: {
      const auto taps = draw_fir_taps(c.num_taps, c.pdp_decay, c.rician_k, rng);
      return add_awgn(apply_fir(x, taps), c.snr_db, rng);
    }
  }
  throw ConfigError("unhandled channel kind");
}

}  // namespace drrff
