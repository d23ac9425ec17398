#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "aar/numeric/graph.hpp"
#include "aar/numeric/rng.hpp"

namespace aar::numeric {

/// Ordered collection of named learnable tensors. Insertion order defines the
/// parameter index used by optimizer state and checkpoints.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor value) {
    if (index_.count(name)) throw ContractError("params: duplicate parameter " + name);
    index_.emplace(name, tensors_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return tensors_.back();
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("params: unknown parameter " + std::string(name));
    return it->second;
  }

  Tensor& operator[](std::string_view name) { return tensors_[index_of(name)]; }
  const Tensor& operator[](std::string_view name) const { return tensors_[index_of(name)]; }

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  /// Scalar count of parameters whose name starts with `prefix`.
  std::size_t scalar_count(std::string_view prefix) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (std::string_view(names_[i]).starts_with(prefix)) n += tensors_[i].size();
    return n;
  }

  /// Zero tensors shaped like every parameter.
  std::vector<Tensor> zeros_like() const {
    std::vector<Tensor> z;
    z.reserve(tensors_.size());
    for (const auto& t : tensors_) z.emplace_back(t.shape());
    return z;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-a, a));
  return t;
}

inline Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

/// Binds stored float parameters into a graph of scalar type T: float graphs
/// alias the storage, other types receive converted copies.
template <class T>
class ParamBinder {
 public:
  ParamBinder(BasicGraph<T>& graph, const ParamStore& store, bool requires_grad = true)
      : graph_(graph), store_(store), requires_grad_(requires_grad), vars_(store.size()), bound_(store.size(), false) {}

  BasicVar<T> operator()(std::string_view name) {
    const std::size_t i = store_.index_of(name);
    if (!bound_[i]) {
      if constexpr (std::is_same_v<T, float>)
        vars_[i] = graph_.param(store_.tensors()[i], requires_grad_);
      else
        vars_[i] = graph_.leaf(BasicTensor<T>::cast(store_.tensors()[i]), requires_grad_);
      bound_[i] = true;
    }
    return vars_[i];
  }

  BasicGraph<T>& graph() const { return graph_; }
  const ParamStore& store() const { return store_; }

  /// Gradients for every parameter after backward (zeros for unused ones).
  std::vector<Tensor> gradients() const {
    std::vector<Tensor> out;
    out.reserve(store_.size());
    for (std::size_t i = 0; i < store_.size(); ++i) {
      if (!bound_[i]) {
        out.emplace_back(store_.tensors()[i].shape());
        continue;
      }
      auto g = graph_.grad(vars_[i]);
      if constexpr (std::is_same_v<T, float>)
        out.push_back(std::move(g));
      else
        out.push_back(Tensor::cast(g));
    }
    return out;
  }

  bool bound(std::size_t i) const { return bound_[i]; }
  BasicVar<T> var(std::size_t i) const { return vars_[i]; }

 private:
  BasicGraph<T>& graph_;
  const ParamStore& store_;
  bool requires_grad_;
  std::vector<BasicVar<T>> vars_;
  std::vector<bool> bound_;
};

}  // namespace aar::numeric
