// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "icfcp/numerics/tensor.hpp"

namespace icfcp::train {

/// Cosine annealing from lr_init to lr_min over `period` steps, then held at lr_min.
inline double cosine_lr(std::size_t step, double lr_init, double lr_min, std::size_t period) {
  if (period == 0) return lr_min;
  const double t = static_cast<double>(std::min(step, period)) / static_cast<double>(period);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update. `grads[i]` pairs with `params[i]`; each
/// gradient is multiplied by `grad_scale` first (e.g. 1/batch).
template <class T>
void adam_step(std::span<num::Tensor<T>> params, std::span<const std::span<const T>> grads,
               AdamState& state, double lr, double grad_scale = 1.0) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_data();
    const auto g = grads[i];
    if (g.empty()) continue;  // parameter took no gradient this step
    if (g.size() != data.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double gk = static_cast<double>(g[k]) * grad_scale;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      const double update = lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + state.eps);
      data[k] = static_cast<T>(static_cast<double>(data[k]) - update);
    }
  }
}

/// Adam on the gradients currently stored in the parameters' grad slots.
template <class T>
void adam_step(std::vector<num::Tensor<T>>& params, AdamState& state, double lr, double grad_scale = 1.0) {
  std::vector<std::span<const T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.has_grad() ? p.grad() : std::span<const T>());
  adam_step<T>(std::span<num::Tensor<T>>(params), std::span<const std::span<const T>>(grads), state, lr,
               grad_scale);
}

}  // namespace icfcp::train
