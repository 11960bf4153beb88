#pragma once

#include <span>

#include "drrff/signal_sim.hpp"
#include "drrff/tensor.hpp"

namespace drrff {

inline constexpr int kImageChannels = 2;
inline constexpr int kImageRows = 16;
inline constexpr int kImageCols = 80;  // one half-symbol per row

// (2, 16, 80): channel 0 real part, channel 1 imaginary part.
using SignalImage = Tensor<double>;

// Divides by the largest |Re| or |Im| over all samples. Throws DegenerateError
// for an all-zero signal.
ComplexSignal normalize(const ComplexSignal& x);

// Sample k goes to (row k / 80, col k % 80). Throws ShapeError unless length is 1280.
SignalImage signal_to_image(const ComplexSignal& x);
ComplexSignal image_to_signal(const SignalImage& img);

// normalize -> image for each selected signal, stacked as a float (N, 2, 16, 80) batch.
Tensor<float> make_batch(std::span<const ComplexSignal> signals, std::span<const int> indices);
Tensor<float> make_batch(std::span<const ComplexSignal> signals);

}  // namespace drrff
