#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "aar/numeric/tensor.hpp"

namespace aar::numeric {

template <class T>
class BasicGraph;

/// Handle to a node of a BasicGraph. Cheap to copy; valid while the graph lives.
template <class T>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicGraph<T>* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  BasicGraph<T>& graph() const { return *graph_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const BasicTensor<T>& value() const { return graph_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return graph_->requires_grad(*this); }

 private:
  BasicGraph<T>* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order because an op can only consume existing nodes.
template <class T>
class BasicGraph {
 public:
  using Var = BasicVar<T>;
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicGraph&, const TensorT& out, const TensorT& out_grad)>;

  explicit BasicGraph(bool recording = true) : recording_(recording) {}
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var constant(TensorT value) { return push("constant", std::move(value), nullptr, false); }

  Var leaf(TensorT value, bool requires_grad = true) {
    return push("leaf", std::move(value), nullptr, requires_grad && recording_);
  }

  /// Leaf that aliases external storage; `value` must outlive the graph.
  Var param(const TensorT& value, bool requires_grad = true) {
    return push("param", TensorT{}, &value, requires_grad && recording_);
  }

  /// Appends an op result. The backward rule is kept only when some parent
  /// requires a gradient and the graph is recording.
  Var emit(const char* op, TensorT value, std::initializer_list<Var> parents, BackwardFn backward) {
    return emit(op, std::move(value), std::vector<Var>(parents), std::move(backward));
  }

  Var emit(const char* op, TensorT value, const std::vector<Var>& parents, BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p);
    needs = needs && recording_;
    Var v = push(op, std::move(value), nullptr, needs);
    if (needs) {
      auto& n = nodes_.back();
      n.backward = std::move(backward);
      n.parents.reserve(parents.size());
      for (const auto& p : parents) n.parents.push_back(p.id());
    }
    return v;
  }

  const TensorT& value(Var v) const {
    const auto& n = nodes_.at(v.id());
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  const char* op_name(Var v) const { return nodes_.at(v.id()).op; }

  /// Gradient buffer of a node, zero-initialized on first access. Ops call this
  /// from their backward rules to accumulate into parents.
  std::span<T> grad_buffer(Var v) {
    auto& n = nodes_.at(v.id());
    if (n.grad.empty()) n.grad = TensorT(value(v).shape());
    return n.grad.data();
  }

  bool has_grad(Var v) const { return !nodes_.at(v.id()).grad.empty(); }

  /// Gradient after backward(); zeros when the node was not reached.
  TensorT grad(Var v) const {
    const auto& n = nodes_.at(v.id());
    if (n.grad.empty()) return TensorT(value(v).shape());
    return n.grad;
  }

  /// Reverse sweep from a scalar loss. Each node's rule runs once, after all of
  /// its consumers have contributed, so leaves used several times get the sum.
  void backward(Var loss) {
    if (value(loss).size() != 1)
      throw ContractError("backward: loss must be scalar, got " + to_string(value(loss).shape()));
    if (!requires_grad(loss)) return;
    grad_buffer(loss)[0] += T(1);
    for (std::int64_t i = loss.id(); i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.ref ? *n.ref : n.owned, n.grad);
    }
  }

 private:
  struct Node {
    const char* op;
    TensorT owned;
    const TensorT* ref = nullptr;
    TensorT grad;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
  };

  Var push(const char* op, TensorT value, const TensorT* ref, bool requires_grad) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    n.ref = ref;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  // deque keeps node addresses stable while closures hold references
  std::deque<Node> nodes_;
  bool recording_;
};

using Graph = BasicGraph<float>;
using Var = BasicVar<float>;

}  // namespace aar::numeric
