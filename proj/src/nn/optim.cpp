#include "reason/nn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace reason::nn {

Sgd::Sgd(std::vector<Tensor> params, SgdOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto &p : params_)
    velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto &p = params_[k];
    if (!p.has_grad())
      continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto &v = velocity_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = g[i] + opts_.weight_decay * w[i];
      v[i] = opts_.momentum * v[i] + d;
      w[i] -= lr * v[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto &p : params_)
    p.zero_grad();
}

double poly_lr(double base, long iter, long max_iter, double power) {
  if (max_iter <= 0)
    return base;
  const double frac = std::clamp(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), 0.0, 1.0);
  return base * std::pow(frac, power);
}

} // namespace reason::nn
