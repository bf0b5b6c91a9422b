#include "reason/nn/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace reason::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape &s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, [](std::size_t a, int b) { return a * b; });
}

std::string shape_str(const Shape &s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i)
    os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  auto n = std::make_shared<detail::Node>();
  n->value.assign(nn::numel(shape), v);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (values.size() != nn::numel(shape))
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                                shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

double Tensor::item() const {
  if (numel() != 1)
    throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return from(shape(), node_->value); }

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                           std::function<void(detail::Node &)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor &p) { return p.defined() && p.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      for (auto &p : parents)
        if (p.defined())
          n->parents.push_back(p.node_);
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

void Tensor::backward() const {
  if (numel() != 1)
    throw std::logic_error("backward() needs a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad)
    return;
  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node *> order;
  std::unordered_set<detail::Node *> seen;
  std::vector<std::pair<detail::Node *, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto &[n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node *p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second)
        stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node *n = *it;
    if (!n->backward)
      continue;
    n->ensure_grad();
    for (auto &p : n->parents)
      if (p->requires_grad)
        p->ensure_grad();
    n->backward(*n);
  }
}

} // namespace reason::nn
