#include <cstring>

#include "doctest.h"
#include "helpers.hpp"

#include "drrff/error.hpp"
#include "drrff/preprocessing.hpp"

using namespace drrff;

namespace {

ComplexSignal random_signal(Rng& rng, std::size_t n = 1280) {
  ComplexSignal s;
  for (std::size_t k = 0; k < n; ++k) s.samples.push_back(rng.complex_normal(1.0));
  return s;
}

bool bitwise_equal(const ComplexSignal& a, const ComplexSignal& b) {
  return a.size() == b.size() &&
         std::memcmp(a.samples.data(), b.samples.data(), a.size() * sizeof(std::complex<double>)) == 0;
}

}  // namespace

TEST_CASE("normalize scales by the largest component") {
  ComplexSignal s;
  s.samples = {{2.0, 0.5}, {-1.0, 1.0}, {0.0, -0.25}};
  const ComplexSignal n = normalize(s);
  CHECK(n.samples[0] == std::complex<double>(1.0, 0.25));
  CHECK(n.samples[1] == std::complex<double>(-0.5, 0.5));
  CHECK(n.samples[2] == std::complex<double>(0.0, -0.125));

  ComplexSignal imag_peak;
  imag_peak.samples = {{0.1, -4.0}, {1.0, 2.0}};
  CHECK(normalize(imag_peak).samples[0] == std::complex<double>(0.025, -1.0));
}

TEST_CASE("normalize is idempotent and positively homogeneous") {
  Rng rng(1);
  const ComplexSignal s = random_signal(rng);
  const ComplexSignal n = normalize(s);
  CHECK(bitwise_equal(normalize(n), n));
  double peak = 0;
  for (auto v : n.samples) peak = std::max({peak, std::fabs(v.real()), std::fabs(v.imag())});
  CHECK(peak == 1.0);
  for (double a : {0.001, 3.0, 250.0}) {
    ComplexSignal scaled = s;
    for (auto& v : scaled.samples) v *= a;
    const ComplexSignal m = normalize(scaled);
    for (std::size_t k = 0; k < n.size(); ++k) CHECK(std::abs(m.samples[k] - n.samples[k]) < 1e-12);
  }
}

TEST_CASE("normalize rejects an all-zero signal") {
  ComplexSignal z;
  z.samples.assign(1280, {0.0, 0.0});
  CHECK_THROWS_AS(normalize(z), DegenerateError);
}

TEST_CASE("signal_to_image packs half-symbols row by row") {
  Rng rng(2);
  const ComplexSignal s = random_signal(rng);
  const SignalImage img = signal_to_image(s);
  REQUIRE(img.shape() == Shape{2, 16, 80});
  CHECK(img[0] == s.samples[0].real());
  CHECK(img[16 * 80 + 0] == s.samples[0].imag());
  CHECK(img[15 * 80 + 79] == s.samples[1279].real());
  CHECK(img[16 * 80 + 15 * 80 + 79] == s.samples[1279].imag());
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 80; ++c) {
      CHECK(img[static_cast<std::size_t>(r) * 80 + c] == s.samples[static_cast<std::size_t>(80 * r + c)].real());
    }
  }
}

TEST_CASE("image and signal round-trip bitwise") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const ComplexSignal s = random_signal(rng);
    CHECK(bitwise_equal(image_to_signal(signal_to_image(s)), s));
    const SignalImage img = signal_to_image(s);
    CHECK(signal_to_image(image_to_signal(img)) == img);
  }
}

TEST_CASE("single imaginary pixel maps to index 165") {
  SignalImage img(Shape{2, 16, 80});
  img[16 * 80 + 2 * 80 + 5] = 0.3;
  const ComplexSignal s = image_to_signal(img);
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(s.samples[k] == (k == 165 ? std::complex<double>(0.0, 0.3) : std::complex<double>(0.0, 0.0)));
  }
  const ComplexSignal zero = image_to_signal(SignalImage(Shape{2, 16, 80}));
  for (auto v : zero.samples) CHECK(v == std::complex<double>(0.0, 0.0));
}

TEST_CASE("wrong shapes are rejected") {
  Rng rng(4);
  CHECK_THROWS_AS(signal_to_image(random_signal(rng, 1279)), ShapeError);
  CHECK_THROWS_AS(image_to_signal(SignalImage(Shape{2, 16, 79})), ShapeError);
  CHECK_THROWS_AS(image_to_signal(SignalImage(Shape{1, 16, 80})), ShapeError);
}

TEST_CASE("make_batch stacks normalized images in [-1, 1]") {
  Rng rng(5);
  std::vector<ComplexSignal> signals{random_signal(rng), random_signal(rng), random_signal(rng)};
  const std::vector<int> idx{2, 0};
  const Tensor<float> b = make_batch(signals, idx);
  REQUIRE(b.shape() == Shape{2, 2, 16, 80});
  const SignalImage first = signal_to_image(normalize(signals[2]));
  for (std::size_t k = 0; k < first.size(); ++k) CHECK(b[k] == static_cast<float>(first[k]));
  for (float v : b.values()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(make_batch(signals).shape() == Shape{3, 2, 16, 80});
}
