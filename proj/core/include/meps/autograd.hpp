#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "meps/tensor.hpp"

namespace meps {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor<T>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of operation records in creation order.
///
/// Nodes are appended after their inputs, so creation order is a topological
/// order and backward() is a single reverse sweep. One graph belongs to one
/// thread.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf owning its value. Gradients are tracked if requires_grad.
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf borrowing an externally owned tensor, which must outlive the graph.
  Var<T> borrow(const Tensor<T>& value, bool requires_grad = true) {
    Node n;
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Append an operation result. fn may be empty when no input needs grad.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw std::logic_error("graph input refers to a later node");
      n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_[id].inputs; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var<T>& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }
  Tensor<T>& grad(const Var<T>& v) { return grad(v.id()); }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Reverse sweep from a scalar loss. Previous gradients are discarded first,
  /// so repeated calls reset rather than accumulate. Leaves that do not reach
  /// the loss end with an all-zero gradient.
  void backward(const Var<T>& loss) {
    if (loss.graph_ != this) throw std::invalid_argument("loss belongs to another graph");
    if (value(loss.id()).size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " +
                       shape_str(value(loss.id()).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    grad(loss.id()).fill(T{1});
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].requires_grad && nodes_[i].inputs.empty()) grad(i);
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  // deque keeps node addresses stable while appending
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All check shapes and throw ShapeError naming the
// offending dimension.

/// Same-size zero-padded convolution. weight is [Cout, Cin, S, S] with odd S,
/// pad = (S - 1) / 2, bias is [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// x [B,C,H,W] scaled per channel by s [B,C].
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s);

/// Channel concatenation of [B,Ci,H,W] operands, in operand order.
template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);

/// Channels [begin, begin + count) of a [B,C,H,W] tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count);

/// [B,C,H,W] -> [B,C] spatial mean.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// sum_j coeffs[j] * stack[j] for coeffs [K] and stack [K, ...].
template <typename T>
Var<T> weighted_sum(const Var<T>& coeffs, const Var<T>& stack);

/// Mean of squared differences; scalar result of shape [1].
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target);

/// Plain forward convolution used outside of graphs (reference paths, tools).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

}  // namespace meps
