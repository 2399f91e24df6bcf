#include "pan/optim.hpp"

#include "pan/errors.hpp"

namespace pan {

Sgd::Sgd(double momentum, bool nesterov) : momentum_(momentum), nesterov_(nesterov) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw InvalidArgument("momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
}

void Sgd::step(Tensor& param, double lr) {
  auto grad = param.grad();
  step(param.data(), grad, lr);
}

void Sgd::step(std::span<double> param, std::span<const double> grad, double lr) {
  if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be >= 0, got " + std::to_string(lr));
  if (param.size() != grad.size()) {
    throw InvalidShape("sgd: " + std::to_string(param.size()) + " parameters but " +
                       std::to_string(grad.size()) + " gradients");
  }
  auto& v = velocity_[param.data()];
  if (v.empty()) v.assign(param.size(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    v[i] = momentum_ * v[i] + grad[i];
    const double direction = nesterov_ ? grad[i] + momentum_ * v[i] : v[i];
    param[i] -= lr * direction;
  }
}

}  // namespace pan
