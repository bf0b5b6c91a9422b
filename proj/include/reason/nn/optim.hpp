#pragma once

#include "reason/nn/tensor.hpp"

#include <vector>

namespace reason::nn {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
class Sgd {
public:
  Sgd(std::vector<Tensor> params, SgdOptions opts);
  void step(double lr);
  void step() { step(opts_.lr); }
  void zero_grad();
  const SgdOptions &options() const { return opts_; }

private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdOptions opts_;
};

/// base * (1 - iter/max_iter)^power
double poly_lr(double base, long iter, long max_iter, double power = 0.9);

} // namespace reason::nn
