#pragma once

#include <cmath>
#include <vector>

#include "aar/numeric/tensor.hpp"

namespace aar::numeric {

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long t = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  AdamState() = default;
  explicit AdamState(const std::vector<Tensor>& params, float b1 = 0.9f, float b2 = 0.999f, float e = 1e-8f)
      : t(0), beta1(b1), beta2(b2), eps(e) {
    for (const auto& p : params) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

/// One bias-corrected Adam update applied in place.
inline void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, float lr) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
    throw ContractError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                        " grads, " + std::to_string(state.m.size()) + " moments");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape() ||
        params[i].shape() != state.v[i].shape())
      throw ContractError("adam_step: shape mismatch at parameter " + std::to_string(i) + ": " +
                          to_string(params[i].shape()) + " vs grad " + to_string(grads[i].shape()));
  state.t += 1;
  const double c1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t));
  const float step = static_cast<float>(lr / c1);
  const float vcorr = static_cast<float>(1.0 / std::sqrt(c2));
  const float b1 = state.beta1, b2 = state.beta2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      p[k] -= step * m[k] / (std::sqrt(v[k]) * vcorr + state.eps);
    }
  }
}

}  // namespace aar::numeric
