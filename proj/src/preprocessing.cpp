#include "drrff/preprocessing.hpp"

#include <cmath>
#include <numeric>

#include "drrff/error.hpp"

namespace drrff {

ComplexSignal normalize(const ComplexSignal& x) {
  double peak = 0.0;
  for (const auto& v : x.samples) peak = std::max({peak, std::abs(v.real()), std::abs(v.imag())});
  if (!(peak > 0.0)) throw DegenerateError("normalize: signal is identically zero");
  ComplexSignal out = x;
  for (auto& v : out.samples) v = {v.real() / peak, v.imag() / peak};
  return out;
}

SignalImage signal_to_image(const ComplexSignal& x) {
  constexpr std::size_t kLen = static_cast<std::size_t>(kImageRows) * kImageCols;
  if (x.size() != kLen) {
    throw ShapeError("signal_to_image: expected " + std::to_string(kLen) + " samples, got " +
                     std::to_string(x.size()));
  }
  SignalImage img(Shape{kImageChannels, kImageRows, kImageCols});
  for (std::size_t k = 0; k < kLen; ++k) {
    img[k] = x.samples[k].real();
    img[kLen + k] = x.samples[k].imag();
  }
  return img;
}

ComplexSignal image_to_signal(const SignalImage& img) {
  if (img.shape() != Shape{kImageChannels, kImageRows, kImageCols}) {
    throw ShapeError("image_to_signal: expected (2, 16, 80), got " + to_string(img.shape()));
  }
  constexpr std::size_t kLen = static_cast<std::size_t>(kImageRows) * kImageCols;
  ComplexSignal s;
  s.samples.resize(kLen);
  for (std::size_t k = 0; k < kLen; ++k) s.samples[k] = {img[k], img[kLen + k]};
  return s;
}

Tensor<float> make_batch(std::span<const ComplexSignal> signals, std::span<const int> indices) {
  constexpr std::size_t kPer = static_cast<std::size_t>(kImageChannels) * kImageRows * kImageCols;
  Tensor<float> batch(Shape{static_cast<int>(indices.size()), kImageChannels, kImageRows, kImageCols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const SignalImage img = signal_to_image(normalize(signals[static_cast<std::size_t>(indices[i])]));
    for (std::size_t k = 0; k < kPer; ++k) batch[i * kPer + k] = static_cast<float>(img[k]);
  }
  return batch;
}

Tensor<float> make_batch(std::span<const ComplexSignal> signals) {
  std::vector<int> all(signals.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(signals, all);
}

}  // namespace drrff
