#pragma once

#include "reason/nn/tensor.hpp"

#include <cstdint>
#include <vector>

namespace reason::nn {

/// While alive, folds every branch decision taken by relu and max_pool2 on
/// this thread into a hash. Two forward passes with equal hashes went through
/// the same piecewise-linear region.
class BranchTrace {
public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace &) = delete;
  BranchTrace &operator=(const BranchTrace &) = delete;
  std::uint64_t hash() const { return hash_; }
  void record(std::uint64_t v) { hash_ ^= v + 0x9e3779b97f4a7c15ull + (hash_ << 6) + (hash_ >> 2); }

private:
  std::uint64_t hash_ = 1469598103934665603ull;
  BranchTrace *prev_;
};

// Element-wise; operands must have identical shapes.
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double s);
Tensor add_scalar(const Tensor &a, double s);
/// a * s where s has a single element.
Tensor scale_by(const Tensor &a, const Tensor &s);
Tensor relu(const Tensor &a);
Tensor sigmoid(const Tensor &a);
Tensor sum_all(const Tensor &a);

/// x: N x C x H x W, w: O x C x k x k, b: O (may be undefined).
Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, int stride, int pad);
/// 2x2 stride-2 transposed convolution. x: N x C x H x W, w: C x O x 2 x 2, b: O.
Tensor conv_transpose2x2(const Tensor &x, const Tensor &w, const Tensor &b);
Tensor max_pool2(const Tensor &x);
Tensor avg_pool2(const Tensor &x);
/// N x C x H x W -> N x C
Tensor global_avg_pool(const Tensor &x);
/// Concatenates 4-D tensors along channels.
Tensor concat_channels(const std::vector<Tensor> &xs);
/// Concatenates 2-D tensors along columns.
Tensor concat_cols(const std::vector<Tensor> &xs);
Tensor group_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, int groups, double eps = 1e-5);

/// x: N x D, w: M x D, b: M (may be undefined) -> N x M
Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b);
/// Softmax over the last dimension.
Tensor softmax_lastdim(const Tensor &x);
Tensor reshape(const Tensor &x, Shape shape);
/// N x C x H x W -> N x (H*W) x C
Tensor to_tokens(const Tensor &x);
/// N x T x C -> N x C
Tensor mean_tokens(const Tensor &x);
/// Batched matmul. a: N x P x Q; b: N x Q x R, or N x R x Q when transpose_b.
Tensor bmm(const Tensor &a, const Tensor &b, bool transpose_b = false);

} // namespace reason::nn
