#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "aar/numeric/graph.hpp"

namespace aar::numeric {

/// Analytic gradients of a scalar closure at `inputs`.
template <class T, class Closure>
std::vector<BasicTensor<T>> analytic_gradients(Closure&& closure, const std::vector<BasicTensor<T>>& inputs) {
  BasicGraph<T> g;
  std::vector<BasicVar<T>> vars;
  for (const auto& in : inputs) vars.push_back(g.leaf(in));
  BasicVar<T> out = closure(g, std::span<const BasicVar<T>>(vars));
  g.backward(out);
  std::vector<BasicTensor<T>> grads;
  for (auto v : vars) grads.push_back(g.grad(v));
  return grads;
}

template <class T, class Closure>
T evaluate(Closure&& closure, const std::vector<BasicTensor<T>>& inputs) {
  BasicGraph<T> g(false);
  std::vector<BasicVar<T>> vars;
  for (const auto& in : inputs) vars.push_back(g.constant(in));
  return closure(g, std::span<const BasicVar<T>>(vars)).value().item();
}

/// Max over every input element of |analytic - central difference| /
/// max(|analytic|, |cd|, 1e-6). The closure is generic over the scalar type;
/// the harness runs it in T (double by default) so rounding of the forward
/// value does not swamp the difference quotient.
template <class T = double, class Closure>
double grad_check(Closure&& closure, std::vector<BasicTensor<T>> inputs, double eps = 1e-3) {
  const auto analytic = analytic_gradients<T>(closure, inputs);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const T saved = inputs[k][i];
      inputs[k][i] = saved + T(eps);
      const double fp = static_cast<double>(evaluate<T>(closure, inputs));
      inputs[k][i] = saved - T(eps);
      const double fm = static_cast<double>(evaluate<T>(closure, inputs));
      inputs[k][i] = saved;
      const double cd = (fp - fm) / (2.0 * eps);
      const double an = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::abs(an), std::abs(cd), 1e-6});
      worst = std::max(worst, std::abs(an - cd) / denom);
    }
  }
  return worst;
}

}  // namespace aar::numeric
