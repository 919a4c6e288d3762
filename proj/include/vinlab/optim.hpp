#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "vinlab/tensor.hpp"

namespace vinlab {

struct RmsPropConfig {
  double lr = 0.002;
  double decay = 0.9;
  double eps = 1e-6;
};

template <typename T>
struct RmsPropState {
  std::vector<Tensor<T>> mean_square;  // one accumulator per parameter tensor
};

/// s <- decay*s + (1-decay)*g^2;  theta <- theta - lr*g/(sqrt(s) + eps).
/// Gradients are validated before any parameter is touched.
template <typename T>
void rmsprop_update(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
                    RmsPropState<T>& state, const RmsPropConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("rmsprop_update: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].shape() != params[k]->shape()) {
      throw ShapeError("rmsprop_update: gradient " + shape_string(grads[k].shape()) + " for parameter " +
                       shape_string(params[k]->shape()));
    }
    if (!grads[k].all_finite()) throw NonFiniteError("rmsprop_update: non-finite gradient");
  }
  if (state.mean_square.empty()) {
    for (const Tensor<T>* p : params) state.mean_square.push_back(Tensor<T>::zeros(p->shape()));
  }
  const T lr = static_cast<T>(config.lr);
  const T decay = static_cast<T>(config.decay);
  const T keep = static_cast<T>(1.0 - config.decay);
  const T eps = static_cast<T>(config.eps);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    T* theta = params[k]->data();
    T* s = state.mean_square[k].data();
    const T* g = grads[k].data();
    for (std::size_t i = 0; i < grads[k].size(); ++i) {
      s[i] = decay * s[i] + keep * g[i] * g[i];
      theta[i] -= lr * g[i] / (std::sqrt(s[i]) + eps);
    }
  }
}

}  // namespace vinlab
