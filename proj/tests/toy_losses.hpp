#pragma once

#include <string>
#include <vector>

#include "helpers.hpp"

#include "drrff/losses.hpp"
#include "drrff/ops.hpp"

namespace testing {

// Each loss composed with a 2-layer tanh network whose four parameter tensors
// are the gradient-check inputs. Data and any fixed maps are drawn once.
struct ToyLossCase {
  std::string name;
  std::vector<drrff::Tensor<double>> params;
  std::function<drrff::Var<double>(const std::vector<drrff::Var<double>>&)> loss;
};

inline drrff::Var<double> toy_net(const drrff::Var<double>& x, const std::vector<drrff::Var<double>>& p) {
  using namespace drrff;
  return ops::linear(ops::tanh(ops::linear(x, p[0], p[1])), p[2], p[3]);
}

inline std::vector<drrff::Tensor<double>> toy_params(int in, int hidden, int out, drrff::Rng& rng, double scale = 0.7) {
  return {random_tensor<double>({hidden, in}, rng, scale), random_tensor<double>({hidden}, rng, 0.1),
          random_tensor<double>({out, hidden}, rng, scale), random_tensor<double>({out}, rng, 0.1)};
}

inline std::vector<ToyLossCase> toy_loss_cases(std::uint64_t seed) {
  using namespace drrff;
  using V = Var<double>;
  constexpr int kN = 6, kDim = 6, kHidden = 5, kClasses = 4;
  Rng rng(seed);
  std::vector<ToyLossCase> cases;

  const V x = V::constant(random_tensor<double>({kN, kDim}, rng));
  const V x_aug = V::constant(random_tensor<double>({kN, kDim}, rng));
  std::vector<int> labels(kN);
  for (int i = 0; i < kN; ++i) labels[static_cast<std::size_t>(i)] = i % kClasses;

  // L_F: the network is the classifier, applied to raw and augmented inputs.
  cases.push_back({"L_F", toy_params(kDim, kHidden, kClasses, rng), [=](const std::vector<V>& p) {
                     return loss_F(ops::softmax_rows(toy_net(x, p)), ops::softmax_rows(toy_net(x_aug, p)),
                                   std::span<const int>(labels), 0.5);
                   }});

  // L_v: the network plays the background extractor.
  cases.push_back({"L_v", toy_params(kDim, kHidden, kDim, rng),
                   [=](const std::vector<V>& p) { return loss_v(x, toy_net(x, p)); }});

  // L_p: the network classifies fixed backgrounds. Labels follow its initial
  // predictions and the output layer is scaled up, so the hinge is active.
  {
    auto params = toy_params(kDim, kHidden, kClasses, rng, 2.5);
    const V bg = V::constant(random_tensor<double>({kN, kDim}, rng));
    const Tensor<double> logits = toy_net(bg, {V::constant(params[0]), V::constant(params[1]),
                                                V::constant(params[2]), V::constant(params[3])})
                                      .value();
    std::vector<int> top(kN);
    for (int i = 0; i < kN; ++i) {
      int best = 0;
      for (int k = 1; k < kClasses; ++k)
        if (logits[static_cast<std::size_t>(i * kClasses + k)] > logits[static_cast<std::size_t>(i * kClasses + best)]) best = k;
      top[static_cast<std::size_t>(i)] = best;
    }
    cases.push_back({"L_p", params, [=](const std::vector<V>& p) {
                       return loss_p(ops::softmax_rows(toy_net(bg, p)), std::span<const int>(top), 0.0);
                     }});
  }

  // L_G: the network plays the generator; a fixed linear map plays F.
  {
    const V fw = V::constant(random_tensor<double>({3, kDim}, rng));
    cases.push_back({"L_G", toy_params(kDim, kHidden, kDim, rng), [=](const std::vector<V>& p) {
                       const V x_hat = toy_net(x, p);
                       return loss_G(x, x_hat, ops::linear(x, fw, V()), ops::linear(x_hat, fw, V()), 10.0);
                     }});
  }
  return cases;
}

}  // namespace testing
