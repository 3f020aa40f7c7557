#include "cecl/optim.hpp"

#include <cmath>
#include <numbers>

#include "cecl/errors.hpp"

namespace cecl {

void Sgd::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != velocity_.size() || grad.size() != velocity_.size()) {
    throw InternalError("optimizer state does not match parameter size");
  }
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] + grad[i] + weight_decay_ * params[i];
    params[i] -= lr * velocity_[i];
  }
}

double cosine_lr(double base, double min_lr, int epoch, int total_epochs) {
  if (total_epochs <= 0) return base;
  const double progress = static_cast<double>(epoch) / total_epochs;
  return min_lr + 0.5 * (base - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace cecl
