#pragma once

#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "drrff/rng.hpp"

namespace drrff {

inline constexpr int kSignalLength = 1280;
inline constexpr double kSampleRate = 1e7;

// One framed baseband preamble.
struct ComplexSignal {
  std::vector<std::complex<double>> samples;
  double sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  bool all_finite() const;
  double mean_power() const;
};

// Transmitter impairments realizing the device transform.
struct DeviceProfile {
  int device_id = 0;
  double iq_gain_mismatch = 0.0;   // g
  double iq_phase_mismatch = 0.0;  // psi, radians
  double cfo = 0.0;                // Hz
  std::complex<double> dc_offset{0.0, 0.0};
  std::complex<double> pa_a1{1.0, 0.0};
  std::complex<double> pa_a3{0.0, 0.0};

  static DeviceProfile identity(int id = 0) {
    DeviceProfile p;
    p.device_id = id;
    return p;
  }
  void validate() const;
};

// Spread of per-device impairments drawn for a synthetic population.
struct DeviceDistribution {
  double iq_gain_std = 0.05;
  double iq_phase_std_deg = 2.0;
  double cfo_max_hz = 30e3;
  double pa_a3_min = 0.01;
  double pa_a3_max = 0.05;
  double dc_max = 0.01;
};

DeviceProfile draw_device_profile(int device_id, const DeviceDistribution& dist, Rng& rng);

enum class ChannelKind { kAwgn, kRicianFlat, kMultipathFir };

std::string to_string(ChannelKind kind);
ChannelKind parse_channel_kind(const std::string& name);

struct ChannelSpec {
  static constexpr double kNoiseless = std::numeric_limits<double>::infinity();

  ChannelKind kind = ChannelKind::kAwgn;
  double snr_db = kNoiseless;
  double rician_k = 0.0;  // rician_flat; also adds a line-of-sight tap to multipath_fir when > 0
  int num_taps = 1;       // multipath_fir
  double pdp_decay = 1.0; // multipath_fir, tap l has mean power exp(-l * pdp_decay)

  void validate() const;
};

// 802.15.4 O-QPSK preamble: identical half-sine shaped symbols from the
// zero-symbol chip sequence, built cyclically so every symbol is identical.
ComplexSignal gen_preamble(double sample_rate = kSampleRate, int chips_per_symbol = 32,
                           int samples_per_chip = 5, int num_symbols = 8);

// CFO -> IQ imbalance -> cubic PA -> DC offset.
ComplexSignal apply_device(const ComplexSignal& s, const DeviceProfile& p);

// Draws a fresh channel realization from `rng` and applies it.
ComplexSignal apply_channel(const ComplexSignal& x, const ChannelSpec& c, Rng& rng);

// Building blocks of apply_channel, exposed for fixed (per-position) channels.
std::vector<std::complex<double>> draw_fir_taps(int num_taps, double pdp_decay, double rician_k, Rng& rng);
ComplexSignal apply_fir(const ComplexSignal& x, const std::vector<std::complex<double>>& taps);
ComplexSignal apply_gain(const ComplexSignal& x, std::complex<double> gain);
// Complex AWGN at `snr_db` relative to the mean power of x; no-op at kNoiseless.
ComplexSignal add_awgn(const ComplexSignal& x, double snr_db, Rng& rng);

}  // namespace drrff
