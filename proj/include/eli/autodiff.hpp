#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "eli/tensor.hpp"

namespace eli {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives,
/// as are references returned by value() and shape().
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
};

/// Accumulators handed to a node's backward closure, one per input. An
/// empty span means that input needs no gradient.
using GradSpans = std::span<const std::span<double>>;
using BackwardFn = std::function<void(const Tensor& grad_out, GradSpans grads)>;

class Gradients;

/// Append-only tape. Inputs of a node always precede it, so the node order
/// is a topological order and the graph is acyclic by construction. A graph
/// belongs to one thread; build one per independent evaluation.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Differentiable input.
  Var leaf(Tensor value);

  /// Records an op result. The closure is dropped when no input requires a
  /// gradient, so inference-only graphs carry no backward state.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool is_leaf(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a scalar output. Throws for non-scalar or
  /// detached outputs.
  Gradients backward(Var output) const;
  /// Vector-Jacobian product: seeds the output with `seed` (same shape).
  Gradients backward(Var output, const Tensor& seed) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  void check_owned(Var v, const char* what) const;

  // deque keeps references from value() valid while the tape grows
  std::deque<Node> nodes_;
};

/// Gradients of one backward pass, kept for leaves.
class Gradients {
 public:
  /// Gradient for a leaf; zeros when the leaf was not reached.
  Tensor of(Var v) const;
  bool reached(Var v) const;

 private:
  friend class Graph;
  const Graph* graph_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

using VarFn = std::function<Var(Graph&, Var)>;
using TensorFn = std::function<Tensor(const Tensor&)>;

/// Dense Jacobian d f(x) / d x as an [m x n] tensor (m = output size,
/// n = input size), one backward pass per output component.
Tensor jacobian(const VarFn& f, const Tensor& x);

/// Central-difference Jacobian. Only evaluates f; never differentiates.
Tensor finite_diff_jacobian(const TensorFn& f, const Tensor& x, double eps);

/// Forward-only evaluation of a graph function on constant input.
TensorFn forward_only(VarFn f);

}  // namespace eli
