#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <random>
#include <string_view>

namespace drrff {

// Seeded random source with distribution helpers that do not depend on the
// standard library's distribution implementations, so streams are stable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream seed for (seed, stream name, index).
  static std::uint64_t derive(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Circular complex Gaussian with E|z|^2 = variance.
  std::complex<double> complex_normal(double variance = 1.0);

  // Fisher-Yates with this stream's draws.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::iter_swap(first + (i - 1), first + below(i));
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace drrff
