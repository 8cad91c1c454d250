#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Graph records every operation in creation order, so the node list is a
// valid topological order by construction. backward() walks it once in
// reverse; every accumulation happens in that single fixed order, which makes
// gradients bit-reproducible.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cfa/tensor.hpp"

namespace cfa::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  /// Propagates the node's output gradient into its inputs' gradient buffers.
  using BackwardFn = std::function<void(Graph&, std::span<const double> out_grad)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that receives a gradient during backward().
  Var parameter(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Appends an op node. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Gradients of non-leaf nodes are
  /// released as soon as they have been propagated.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first use. Empty span if the
  /// node does not require a gradient, so ops can skip that input.
  std::span<double> grad_buffer(std::size_t id);

  /// Gradient of a leaf after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;
  /// Same as grad() but moves the buffer out of the graph.
  Tensor take_grad(Var v);

  std::size_t size() const { return nodes_.size(); }

  /// When enabled every recorded op output is checked for NaN/Inf.
  /// Defaults to on in debug builds.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  std::vector<Node> nodes_;
  bool check_finite_;
};

// Dense 2-D product: [M x N] * [N x P].
Var matmul(Var a, Var b);

// Valid cross-correlation, no padding. input is [H x W x Cin] or
// [N x H x W x Cin]; kernels are [k x k x Cin x Cout].
Var conv2d(Var input, Var kernels, std::size_t stride);

// Adds bias [C] along the last axis of x.
Var add_bias(Var x, Var bias);

Var exp(Var x);
// Throws DomainError for any non-positive entry.
Var log(Var x);
// Gradient is 0 for x <= 0.
Var relu(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);

// Softmax over the last axis, computed with max subtraction.
Var softmax(Var x);

// Mean of squared differences over all elements; returns a scalar [1].
Var mse_loss(Var pred, Var target);

// Sum of all elements; returns a scalar [1].
Var sum(Var x);

// Sum over the last axis, dropping it.
Var sum_last_axis(Var x);

Var reshape(Var x, Shape shape);

// Independent linear maps per location: x [N x L x D], w [L x D x E] -> [N x L x E].
Var blockwise_matmul(Var x, Var w);

}  // namespace cfa::ad
