#pragma once

#include <span>

#include "drrff/autograd.hpp"

namespace drrff {

struct LossConfig {
  double lambda = 0.5;   // weight of the raw term in the extractor loss
  double alpha = 10.0;   // weight of the prediction penalty in the background loss
  double beta = 10.0;    // weight of the embedding term in the generator loss
  double epsilon = 0.0;  // slack of the prediction penalty
  double delta = 10.0;   // hypersphere radius

  // Throws ConfigError when lambda is outside [0, 1] or a weight is negative.
  void validate() const;
};

// Probabilities are clamped below at this value before taking logs.
inline constexpr double kLogFloor = 1e-12;

// 1 - cos(a, b), in [0, 2]. Throws DegenerateError if either vector is zero.
template <typename T>
double cosine_distance(std::span<const T> a, std::span<const T> b);

// Extractor loss over a batch of class probabilities (N, K):
// mean_i -[lambda ln p_raw(y_i) + (1 - lambda) ln p_aug(y_i)].
// With lambda == 1 the augmented term is skipped and p_aug may be undefined.
template <typename T>
Var<T> loss_F(const Var<T>& p_raw, const Var<T>& p_aug, std::span<const int> labels, T lambda);

// Reconstruction term of the background loss: mean squared error.
template <typename T>
Var<T> loss_v(const Var<T>& x, const Var<T>& background);

// Prediction penalty on the background: ([mean_i ln(K p(y_i)) - epsilon]_+)^2,
// zero when the background carries no identity information.
template <typename T>
Var<T> loss_p(const Var<T>& p_background, std::span<const int> labels, T epsilon);

// loss_v + alpha * loss_p
template <typename T>
Var<T> loss_Q(const Var<T>& lv, const Var<T>& lp, T alpha);

// mse(x, x_hat) + beta * mse(F(x), F(x_hat))
template <typename T>
Var<T> loss_G(const Var<T>& x, const Var<T>& x_hat, const Var<T>& z, const Var<T>& z_hat, T beta);

}  // namespace drrff
