#pragma once

#include <span>

#include "drrff/autograd.hpp"

// Differentiable tensor operations. Image tensors are (N, C, H, W); matrices
// are (rows, cols); reductions return rank-0 scalars. Instantiated for float
// (training) and double (gradient checking).
namespace drrff::ops {

// Batch-norm statistics source.
enum class NormMode {
  kBatchUpdate,  // batch statistics, running estimates updated
  kBatch,        // batch statistics, running estimates untouched
  kRunning,      // running estimates only
};

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

// Per-channel normalization over (N, H, W); rank-2 input is treated as (N, C, 1, 1).
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, NormMode mode, T momentum,
                  T eps);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> tanh(const Var<T>& x);

// 2x2 max pooling with stride 2; H and W must be even.
template <typename T>
Var<T> max_pool2(const Var<T>& x);

// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample2(const Var<T>& x);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c);

template <typename T>
Var<T> square(const Var<T>& x);

template <typename T>
Var<T> abs(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// x: (N, D), weight: (O, D), bias: (O) or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// (N, D) x (K, D)^T -> (N, K)
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

// Rescales every row of a rank-2 tensor to Euclidean norm `radius`.
// Throws DegenerateError on a zero row.
template <typename T>
Var<T> normalize_rows(const Var<T>& x, T radius);

template <typename T>
Var<T> softmax_rows(const Var<T>& x);

// ln(max(p, floor)); zero gradient where the floor is active.
template <typename T>
Var<T> log_floor(const Var<T>& p, T floor);

// out[i] = x[i, index[i]] for a rank-2 x.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const int> index);

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

// mean((a - b)^2) over all elements.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

// Selects rows (first axis) in the given order.
template <typename T>
Var<T> index_select(const Var<T>& x, std::span<const int> rows);

}  // namespace drrff::ops
