#include "drrff/losses.hpp"

#include <cmath>

#include "drrff/error.hpp"
#include "drrff/ops.hpp"

namespace drrff {

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
}

template <typename T>
double cosine_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_distance: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateError("cosine_distance: zero vector");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return 1.0 - std::clamp(c, -1.0, 1.0);
}

namespace {

template <typename T>
Var<T> mean_log_true(const Var<T>& p, std::span<const int> labels) {
  if (p.shape().size() != 2 || p.shape()[0] != static_cast<int>(labels.size())) {
    throw ShapeError("expected (N, K) probabilities for " + std::to_string(labels.size()) + " labels, got " +
                     to_string(p.shape()));
  }
  return ops::mean(ops::log_floor(ops::gather_rows(p, labels), static_cast<T>(kLogFloor)));
}

}  // namespace

template <typename T>
Var<T> loss_F(const Var<T>& p_raw, const Var<T>& p_aug, std::span<const int> labels, T lambda) {
  if (!(lambda >= T(0) && lambda <= T(1))) throw ConfigError("lambda must lie in [0, 1]");
  Var<T> raw = ops::scale(mean_log_true(p_raw, labels), -lambda);
  if (lambda == T(1)) return raw;
  if (!p_aug.defined()) throw ConfigError("loss_F: augmented probabilities required when lambda < 1");
  return ops::add(raw, ops::scale(mean_log_true(p_aug, labels), -(T(1) - lambda)));
}

template <typename T>
Var<T> loss_v(const Var<T>& x, const Var<T>& background) {
  return ops::mse(x, background);
}

template <typename T>
Var<T> loss_p(const Var<T>& p_background, std::span<const int> labels, T epsilon) {
  const T log_k = static_cast<T>(std::log(static_cast<double>(p_background.shape().at(1))));
  const Var<T> m = ops::add_scalar(mean_log_true(p_background, labels), log_k - epsilon);
  return ops::square(ops::relu(m));
}

template <typename T>
Var<T> loss_Q(const Var<T>& lv, const Var<T>& lp, T alpha) {
  return ops::add(lv, ops::scale(lp, alpha));
}

template <typename T>
Var<T> loss_G(const Var<T>& x, const Var<T>& x_hat, const Var<T>& z, const Var<T>& z_hat, T beta) {
  return ops::add(ops::mse(x, x_hat), ops::scale(ops::mse(z, z_hat), beta));
}

#define DRRFF_INSTANTIATE_LOSSES(T)                                                            \
  template double cosine_distance<T>(std::span<const T>, std::span<const T>);                 \
  template Var<T> loss_F(const Var<T>&, const Var<T>&, std::span<const int>, T);              \
  template Var<T> loss_v(const Var<T>&, const Var<T>&);                                       \
  template Var<T> loss_p(const Var<T>&, std::span<const int>, T);                             \
  template Var<T> loss_Q(const Var<T>&, const Var<T>&, T);                                    \
  template Var<T> loss_G(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, T);

DRRFF_INSTANTIATE_LOSSES(float)
DRRFF_INSTANTIATE_LOSSES(double)

}  // namespace drrff
