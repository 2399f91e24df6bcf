#include "pan/autodiff.hpp"

#include <algorithm>

#include "pan/errors.hpp"

namespace pan {

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw InvalidArgument("variable does not belong to this graph");
  return nodes_[v.id];
}

Graph::Node& Graph::node(Var v) {
  if (v.id >= nodes_.size()) throw InvalidArgument("variable does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::parameter(Tensor& param) {
  Node n;
  n.value = Tensor(param.shape(), param.values());
  n.param = &param;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (!in.valid()) continue;
    n.inputs.push_back(node(in).requires_grad ? in.id : Var::npos);
    n.requires_grad = n.requires_grad || node(in).requires_grad;
  }
  std::erase(n.inputs, Var::npos);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

std::span<const double> Graph::grad(Var v) const { return node(v).grad; }

std::span<const double> Graph::upstream(Var self) const { return node(self).grad; }

std::span<double> Graph::grad_sink(Var input) {
  Node& n = node(input);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw InvalidArgument("backward needs a scalar loss, got shape " +
                          to_string(value(loss).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  visits_ = 0;
  if (!node(loss).requires_grad) return;
  nodes_[loss.id].grad.assign(1, 1.0);

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, Var{i});
    ++visits_;
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    auto dst = n.param->grad();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidShape(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                       to_string(b.shape()));
  }
}
}  // namespace

Var add(Graph& g, Var a, Var b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require_same_shape(x, y, "add");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
    auto up = g.upstream(self);
    for (Var in : {a, b}) {
      if (!g.requires_grad(in)) continue;
      auto dst = g.grad_sink(in);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require_same_shape(x, y, "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
    auto up = g.upstream(self);
    if (g.requires_grad(a)) {
      auto other = g.value(b).data();
      auto dst = g.grad_sink(a);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up[i] * other[i];
    }
    if (g.requires_grad(b)) {
      auto other = g.value(a).data();
      auto dst = g.grad_sink(b);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up[i] * other[i];
    }
  });
}

Var scale(Graph& g, Var a, double factor) {
  const Tensor& x = g.value(a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return g.record(std::move(out), {a}, [a, factor](Graph& g, Var self) {
    auto up = g.upstream(self);
    auto dst = g.grad_sink(a);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up[i] * factor;
  });
}

Var sum(Graph& g, Var a) {
  const Tensor& x = g.value(a);
  double total = 0.0;
  for (double v : x.data()) total += v;
  return g.record(Tensor::scalar(total), {a}, [a](Graph& g, Var self) {
    const double up = g.upstream(self)[0];
    auto dst = g.grad_sink(a);
    for (double& d : dst) d += up;
  });
}

Var reshape(Graph& g, Var a, Shape shape) {
  Tensor out = g.value(a).reshaped(std::move(shape));
  return g.record(std::move(out), {a}, [a](Graph& g, Var self) {
    auto up = g.upstream(self);
    auto dst = g.grad_sink(a);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up[i];
  });
}

}  // namespace pan
