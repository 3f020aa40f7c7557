#pragma once

#include <span>
#include <vector>

namespace cecl {

// SGD with heavy-ball momentum and L2 weight decay:
//   v <- mu * v + (g + wd * p);  p <- p - lr * v
class Sgd {
 public:
  Sgd() = default;
  Sgd(std::size_t size, double momentum, double weight_decay)
      : velocity_(size, 0.0), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<double> params, std::span<const double> grad, double lr);

  const std::vector<double>& velocity() const { return velocity_; }
  std::vector<double>& velocity() { return velocity_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  std::vector<double> velocity_;
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
};

// Cosine annealing from base to min_lr over total_epochs, evaluated at the
// start of `epoch` (0-based).
double cosine_lr(double base, double min_lr, int epoch, int total_epochs);

}  // namespace cecl
