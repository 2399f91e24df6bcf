#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "pan/tensor.hpp"

namespace pan {

/// Mini-batch SGD with (optionally Nesterov) momentum:
///   v <- momentum * v + g
///   p <- p - lr * (g + momentum * v)     (Nesterov)
///   p <- p - lr * v                      (classic)
/// Velocity is keyed by parameter identity and persists across step() calls.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.9, bool nesterov = true);

  // Updates `param` in place from param.grad(). lr == 0 leaves it untouched.
  void step(Tensor& param, double lr);
  void step(std::span<double> param, std::span<const double> grad, double lr);

  double momentum() const { return momentum_; }
  bool nesterov() const { return nesterov_; }
  void reset() { velocity_.clear(); }

 private:
  double momentum_;
  bool nesterov_;
  std::unordered_map<const double*, std::vector<double>> velocity_;
};

}  // namespace pan
