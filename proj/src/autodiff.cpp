#include "eli/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace eli {

const Tensor& Var::value() const { return graph->value(*this); }

const Shape& Var::shape() const { return value().shape(); }

bool Var::requires_grad() const { return graph->requires_grad(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, true});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in, "record");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check_owned(Var v, const char* what) const {
  if (v.graph != this || v.id >= nodes_.size()) {
    throw std::invalid_argument(std::string(what) + ": variable does not belong to this graph");
  }
}

const Tensor& Graph::value(Var v) const {
  check_owned(v, "value");
  return nodes_[v.id].value;
}

bool Graph::requires_grad(Var v) const {
  check_owned(v, "requires_grad");
  return nodes_[v.id].requires_grad;
}

bool Graph::is_leaf(Var v) const {
  check_owned(v, "is_leaf");
  return nodes_[v.id].leaf;
}

Gradients Graph::backward(Var output) const {
  check_owned(output, "backward");
  const Tensor& out = nodes_[output.id].value;
  if (out.size() != 1) {
    throw std::invalid_argument("backward: output must be scalar, got " +
                                shape_string(out.shape()));
  }
  return backward(output, Tensor::adopt(out.shape(), {1.0}));
}

Gradients Graph::backward(Var output, const Tensor& seed) const {
  check_owned(output, "backward");
  const Node& out = nodes_[output.id];
  if (!out.requires_grad) {
    throw std::invalid_argument("backward: output is detached from every differentiable leaf");
  }
  require_same_shape(out.value, seed, "backward seed");

  std::vector<std::vector<double>> acc(output.id + 1);
  acc[output.id] = seed.to_vector();
  std::vector<std::span<double>> spans;
  for (std::uint32_t id = output.id + 1; id-- > 0;) {
    if (acc[id].empty()) continue;
    const Node& node = nodes_[id];
    if (node.leaf) continue;
    spans.assign(node.inputs.size(), std::span<double>());
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::uint32_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (acc[in].empty()) acc[in].assign(nodes_[in].value.size(), 0.0);
      spans[k] = acc[in];
    }
    const Tensor grad_out = Tensor::adopt(node.value.shape(), std::move(acc[id]));
    acc[id] = {};
    node.backward(grad_out, spans);
  }

  Gradients result;
  result.graph_ = this;
  result.grads_ = std::move(acc);
  return result;
}

Tensor Gradients::of(Var v) const {
  if (v.graph != graph_) throw std::invalid_argument("gradients: variable from another graph");
  const Tensor& value = graph_->value(v);
  if (!graph_->is_leaf(v)) {
    throw std::invalid_argument("gradients: only leaf gradients are retained");
  }
  if (v.id < grads_.size() && !grads_[v.id].empty()) {
    return Tensor::adopt(value.shape(), grads_[v.id]);
  }
  return Tensor::zeros(value.shape());
}

bool Gradients::reached(Var v) const {
  return v.graph == graph_ && v.id < grads_.size() && !grads_[v.id].empty();
}

Tensor jacobian(const VarFn& f, const Tensor& x) {
  Graph g;
  const Var xv = g.leaf(x);
  const Var y = f(g, xv);
  if (y.graph != &g) throw std::invalid_argument("jacobian: f returned a foreign variable");
  if (!g.requires_grad(y)) {
    throw std::invalid_argument("jacobian: output is not connected to the input");
  }
  const std::size_t m = y.size();
  const std::size_t n = x.size();
  std::vector<double> out(m * n, 0.0);
  std::vector<double> seed(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    seed[j] = 1.0;
    const Gradients grads = g.backward(y, Tensor::adopt(y.shape(), seed));
    seed[j] = 0.0;
    const Tensor row = grads.of(xv);
    std::copy(row.values().begin(), row.values().end(), out.begin() + j * n);
  }
  return Tensor::adopt(Shape{m, n}, std::move(out));
}

Tensor finite_diff_jacobian(const TensorFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_jacobian: eps must be positive");
  const std::size_t n = x.size();
  std::vector<double> probe = x.to_vector();
  std::vector<double> columns;
  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const Tensor plus = f(Tensor::adopt(x.shape(), probe));
    probe[i] = orig - eps;
    const Tensor minus = f(Tensor::adopt(x.shape(), probe));
    probe[i] = orig;
    if (!plus.all_finite() || !minus.all_finite()) {
      throw std::runtime_error("finite_diff_jacobian: non-finite output at coordinate " +
                               std::to_string(i));
    }
    if (i == 0) {
      m = plus.size();
      columns.assign(m * n, 0.0);
    }
    if (plus.size() != m || minus.size() != m) {
      throw std::runtime_error("finite_diff_jacobian: output size changed between evaluations");
    }
    for (std::size_t j = 0; j < m; ++j) {
      columns[j * n + i] = (plus[j] - minus[j]) / (2.0 * eps);
    }
  }
  if (n == 0) {
    m = f(x).size();
    columns.clear();
  }
  return Tensor::adopt(Shape{m, n}, std::move(columns));
}

TensorFn forward_only(VarFn f) {
  return [f = std::move(f)](const Tensor& x) {
    Graph g;
    return f(g, g.constant(x)).value();
  };
}

}  // namespace eli
