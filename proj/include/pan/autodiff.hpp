#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "pan/tensor.hpp"

namespace pan {

class Graph;

/// Handle to a value recorded in a Graph. Only meaningful together with the
/// graph that produced it.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/// Reverse-mode tape. Operations are appended in evaluation order, so the
/// recording order is already a topological order and backward is a single
/// reverse sweep. A graph is built per forward pass and thrown away.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Var self)>;

  // Leaf bound to an external parameter; backward() adds into param.grad().
  // The parameter must outlive the graph.
  Var parameter(Tensor& param);
  // Leaf without gradient.
  Var constant(Tensor value);
  // Leaf with a gradient that stays inside the graph (read it with grad()).
  Var variable(Tensor value);

  // Records an operation output. The backward rule is kept only when at least
  // one input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Gradient of the last backward() with respect to v; empty when v received none.
  std::span<const double> grad(Var v) const;

  // For backward rules: upstream gradient of an op's output, and the
  // accumulation target of an input (allocated zeroed on first use).
  std::span<const double> upstream(Var self) const;
  std::span<double> grad_sink(Var input);

  // Propagates d(loss)/d(.) through every recorded op once and accumulates
  // into bound parameters. Node gradients are reset first, so calling it
  // twice adds the parameter gradients twice.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  // Number of backward rules invoked by the last backward().
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

// Elementwise and reduction ops.
Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double factor);
Var sum(Graph& g, Var a);
Var reshape(Graph& g, Var a, Shape shape);

}  // namespace pan
