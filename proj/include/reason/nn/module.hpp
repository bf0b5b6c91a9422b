#pragma once

#include "reason/nn/tensor.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace reason::nn {

using Rng = std::mt19937_64;

/// Owner of trainable parameters and child modules. Parameter order is the
/// registration order (own parameters first, then children), which fixes the
/// layout of the flattened parameter vector.
class Module {
public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module &) = delete;
  Module &operator=(const Module &) = delete;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

protected:
  Tensor register_parameter(std::string name, Tensor t);
  template <typename M> M &register_module(std::string name, std::unique_ptr<M> m) {
    M &ref = *m;
    children_.emplace_back(std::move(name), std::move(m));
    return ref;
  }

private:
  void collect(const std::string &prefix, std::vector<std::pair<std::string, Tensor>> &out) const;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

/// Flattened copy of all parameters in registration order.
std::vector<double> flatten_parameters(const Module &m);
/// Inverse of flatten_parameters; throws on length mismatch.
void load_parameters(Module &m, std::span<const double> values);
std::vector<double> flatten_gradients(const Module &m);

/// Uniform(-bound, bound) initial values.
std::vector<double> uniform_init(std::size_t n, double bound, Rng &rng);

class Conv2d : public Module {
public:
  Conv2d(int in, int out, int kernel, int stride, int pad, Rng &rng, bool bias = true);
  Tensor forward(const Tensor &x) const;
  int out_channels() const { return out_; }

private:
  int out_, stride_, pad_;
  Tensor weight_, bias_;
};

class ConvTranspose2x2 : public Module {
public:
  ConvTranspose2x2(int in, int out, Rng &rng);
  Tensor forward(const Tensor &x) const;

private:
  Tensor weight_, bias_;
};

class Linear : public Module {
public:
  Linear(int in, int out, Rng &rng, bool bias = true);
  Tensor forward(const Tensor &x) const;
  int in_features() const { return in_; }
  int out_features() const { return out_; }
  const Tensor &weight() const { return weight_; }
  const Tensor &bias() const { return bias_; }

private:
  int in_, out_;
  Tensor weight_, bias_;
};

class GroupNorm : public Module {
public:
  /// Uses the largest group count <= max_groups that divides the channel count.
  explicit GroupNorm(int channels, int max_groups = 8);
  Tensor forward(const Tensor &x) const;

private:
  int groups_;
  Tensor gamma_, beta_;
};

} // namespace reason::nn
