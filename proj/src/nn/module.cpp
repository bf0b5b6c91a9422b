#include "reason/nn/module.hpp"
#include "reason/nn/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace reason::nn {

Tensor Module::register_parameter(std::string name, Tensor t) {
  params_.emplace_back(std::move(name), t);
  return t;
}

void Module::collect(const std::string &prefix, std::vector<std::pair<std::string, Tensor>> &out) const {
  for (const auto &[name, t] : params_)
    out.emplace_back(prefix + name, t);
  for (const auto &[name, child] : children_)
    child->collect(prefix + name + ".", out);
}

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect("", out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto &[name, t] : named_parameters())
    out.push_back(t);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto &t : parameters())
    n += t.numel();
  return n;
}

void Module::zero_grad() {
  for (auto t : parameters())
    t.zero_grad();
}

std::vector<double> flatten_parameters(const Module &m) {
  std::vector<double> out;
  out.reserve(m.parameter_count());
  for (const auto &t : m.parameters())
    out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<double> flatten_gradients(const Module &m) {
  std::vector<double> out;
  for (const auto &t : m.parameters()) {
    if (t.has_grad())
      out.insert(out.end(), t.grad().begin(), t.grad().end());
    else
      out.insert(out.end(), t.numel(), 0.0);
  }
  return out;
}

void load_parameters(Module &m, std::span<const double> values) {
  if (values.size() != m.parameter_count())
    throw std::invalid_argument("load_parameters: got " + std::to_string(values.size()) + " values for " +
                                std::to_string(m.parameter_count()) + " parameters");
  std::size_t off = 0;
  for (auto t : m.parameters()) {
    auto dst = t.mutable_data();
    std::copy(values.begin() + off, values.begin() + off + dst.size(), dst.begin());
    off += dst.size();
  }
}

std::vector<double> uniform_init(std::size_t n, double bound, Rng &rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(n);
  for (auto &x : v)
    x = dist(rng);
  return v;
}

Conv2d::Conv2d(int in, int out, int kernel, int stride, int pad, Rng &rng, bool bias)
    : out_(out), stride_(stride), pad_(pad) {
  const int fan_in = in * kernel * kernel;
  weight_ = register_parameter("weight", Tensor::parameter({out, in, kernel, kernel},
                                                           uniform_init(static_cast<std::size_t>(out) * fan_in,
                                                                        std::sqrt(6.0 / fan_in), rng)));
  if (bias)
    bias_ = register_parameter("bias", Tensor::parameter({out}, std::vector<double>(out, 0.0)));
}

Tensor Conv2d::forward(const Tensor &x) const { return conv2d(x, weight_, bias_, stride_, pad_); }

ConvTranspose2x2::ConvTranspose2x2(int in, int out, Rng &rng) {
  weight_ = register_parameter(
      "weight", Tensor::parameter({in, out, 2, 2}, uniform_init(static_cast<std::size_t>(in) * out * 4,
                                                                std::sqrt(6.0 / in), rng)));
  bias_ = register_parameter("bias", Tensor::parameter({out}, std::vector<double>(out, 0.0)));
}

Tensor ConvTranspose2x2::forward(const Tensor &x) const { return conv_transpose2x2(x, weight_, bias_); }

Linear::Linear(int in, int out, Rng &rng, bool bias) : in_(in), out_(out) {
  weight_ = register_parameter("weight", Tensor::parameter({out, in}, uniform_init(static_cast<std::size_t>(out) * in,
                                                                                    1.0 / std::sqrt(in), rng)));
  if (bias)
    bias_ = register_parameter("bias", Tensor::parameter({out}, std::vector<double>(out, 0.0)));
}

Tensor Linear::forward(const Tensor &x) const { return linear(x, weight_, bias_); }

GroupNorm::GroupNorm(int channels, int max_groups) {
  groups_ = std::max(1, std::min(max_groups, channels));
  while (channels % groups_)
    --groups_;
  gamma_ = register_parameter("gamma", Tensor::parameter({channels}, std::vector<double>(channels, 1.0)));
  beta_ = register_parameter("beta", Tensor::parameter({channels}, std::vector<double>(channels, 0.0)));
}

Tensor GroupNorm::forward(const Tensor &x) const { return group_norm(x, gamma_, beta_, groups_); }

} // namespace reason::nn
