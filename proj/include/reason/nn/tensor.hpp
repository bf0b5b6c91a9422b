#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace reason::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape &s);
std::string shape_str(const Shape &s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node &)> backward;

  std::vector<double> &ensure_grad() {
    if (grad.size() != value.size())
      grad.assign(value.size(), 0.0);
    return grad;
  }
};

} // namespace detail

/// Handle to a node of the reverse-mode autodiff graph. Copies share the node.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(i); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Direct write access; only meant for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  /// Backpropagates from a scalar with seed gradient 1.
  void backward() const;
  /// Same values, cut from the graph.
  Tensor detach() const;

  detail::Node *node() const { return node_.get(); }
  const std::shared_ptr<detail::Node> &node_ptr() const { return node_; }

  /// Result of an op. Parents and the backward closure are dropped when no
  /// parent needs gradients or gradient recording is disabled.
  static Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                            std::function<void(detail::Node &)> backward);

private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, teacher forward passes).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool prev_;
};

} // namespace reason::nn
