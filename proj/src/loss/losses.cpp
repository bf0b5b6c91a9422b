#include "reason/loss/losses.hpp"
#include "reason/nn/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace reason::loss {

using nn::Tensor;
using detail_node = nn::detail::Node;

namespace {

void check_grid(const GridU8 &g, int H, int W, const char *what) {
  if (g.rows() != H || g.cols() != W)
    throw std::invalid_argument(std::string(what) + " is " + std::to_string(g.rows()) + "x" +
                                std::to_string(g.cols()) + ", expected " + std::to_string(H) + "x" +
                                std::to_string(W));
}

bool in_region(const std::uint8_t *r, std::size_t i) { return r == nullptr || r[i] != 0; }

struct Accum {
  double inter = 0, psum = 0, gsum = 0;
  std::size_t count = 0;
};

// Dice over probabilities p; optionally adds scale * dL/dp to dp.
double dice_kernel(const double *p, const std::uint8_t *t, const std::uint8_t *r, std::size_t n, double *dp,
                   double scale) {
  Accum a;
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_region(r, i))
      continue;
    const double g = t[i] ? 1.0 : 0.0;
    a.inter += p[i] * g;
    a.psum += p[i];
    a.gsum += g;
  }
  const double num = 2.0 * a.inter + kDiceEps;
  const double den = a.psum + a.gsum + kDiceEps;
  if (dp)
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_region(r, i))
        continue;
      const double g = t[i] ? 1.0 : 0.0;
      dp[i] += scale * -(2.0 * g * den - num) / (den * den);
    }
  return 1.0 - num / den;
}

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Cross-entropy (mean over region) plus Dice on the foreground softmax, from
// two logit planes. Gradients are accumulated with the given scale.
double seg_kernel(const double *l0, const double *l1, const std::uint8_t *t, const std::uint8_t *r,
                  std::size_t n, double *g0, double *g1, double scale, bool with_dice, bool with_ce,
                  bool &empty) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    count += in_region(r, i) ? 1 : 0;
  empty = count == 0;
  if (empty)
    return 0.0;

  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i)
    p[i] = 1.0 / (1.0 + std::exp(l0[i] - l1[i]));

  double value = 0.0;
  if (with_ce) {
    double ce = 0.0;
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_region(r, i))
        continue;
      const double lse = log_sum_exp2(l0[i], l1[i]);
      ce += lse - (t[i] ? l1[i] : l0[i]);
      if (g0) {
        const double d1 = p[i] - (t[i] ? 1.0 : 0.0);
        g1[i] += scale * inv * d1;
        g0[i] -= scale * inv * d1;
      }
    }
    value += ce * inv;
  }
  if (with_dice) {
    std::vector<double> dp(g0 ? n : 0, 0.0);
    value += dice_kernel(p.data(), t, r, n, g0 ? dp.data() : nullptr, 1.0);
    if (g0)
      for (std::size_t i = 0; i < n; ++i) {
        const double d = scale * dp[i] * p[i] * (1.0 - p[i]);
        g1[i] += d;
        g0[i] -= d;
      }
  }
  return value;
}

Tensor seg_op(const Tensor &logits, const std::vector<const GridU8 *> &targets,
              const std::vector<const GridU8 *> &regions, bool with_dice, bool with_ce, LossFlags *flags) {
  if (logits.ndim() != 4 || logits.dim(1) != 2)
    throw std::invalid_argument("segmentation loss expects N x 2 x H x W logits, got " +
                                nn::shape_str(logits.shape()));
  const int N = logits.dim(0), H = logits.dim(2), W = logits.dim(3);
  if (static_cast<int>(targets.size()) != N || static_cast<int>(regions.size()) != N)
    throw std::invalid_argument("segmentation loss: batch of " + std::to_string(N) + " with " +
                                std::to_string(targets.size()) + " targets and " + std::to_string(regions.size()) +
                                " regions");
  for (int s = 0; s < N; ++s) {
    if (!targets[s])
      throw std::invalid_argument("segmentation loss: missing target");
    check_grid(*targets[s], H, W, "target");
    if (regions[s])
      check_grid(*regions[s], H, W, "region mask");
  }
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const double *lv = logits.data().data();
  double total = 0.0;
  for (int s = 0; s < N; ++s) {
    bool empty = false;
    const double *l0 = lv + 2 * s * HW;
    total += seg_kernel(l0, l0 + HW, targets[s]->values().data(), regions[s] ? regions[s]->values().data() : nullptr,
                        HW, nullptr, nullptr, 0.0, with_dice, with_ce, empty);
    if (empty && flags)
      ++flags->empty_regions;
  }
  total /= N;

  detail_node *px = logits.node();
  return Tensor::make_result({}, {total}, {logits}, [=](detail_node &n) {
    const double scale = n.grad[0] / N;
    for (int s = 0; s < N; ++s) {
      bool empty = false;
      const double *l0 = px->value.data() + 2 * s * HW;
      double *g0 = px->grad.data() + 2 * s * HW;
      seg_kernel(l0, l0 + HW, targets[s]->values().data(), regions[s] ? regions[s]->values().data() : nullptr, HW,
                 g0, g0 + HW, scale, with_dice, with_ce, empty);
    }
  });
}

Tensor as_batch(const Tensor &logits) {
  if (logits.ndim() != 3 || logits.dim(0) != 2)
    throw std::invalid_argument("expected 2 x H x W logits, got " + nn::shape_str(logits.shape()));
  return nn::reshape(logits, {1, 2, logits.dim(1), logits.dim(2)});
}

} // namespace

Tensor dice_loss(const Tensor &fg_prob, const GridU8 &target, const GridU8 *region) {
  if (fg_prob.ndim() != 2)
    throw std::invalid_argument("dice_loss expects H x W probabilities, got " + nn::shape_str(fg_prob.shape()));
  const int H = fg_prob.dim(0), W = fg_prob.dim(1);
  check_grid(target, H, W, "dice target");
  if (region)
    check_grid(*region, H, W, "dice region");
  const std::size_t n = fg_prob.numel();
  const std::uint8_t *t = target.values().data();
  const std::uint8_t *r = region ? region->values().data() : nullptr;
  const double v = dice_kernel(fg_prob.data().data(), t, r, n, nullptr, 0.0);
  detail_node *pp = fg_prob.node();
  return Tensor::make_result({}, {v}, {fg_prob}, [=](detail_node &node) {
    dice_kernel(pp->value.data(), t, r, n, pp->grad.data(), node.grad[0]);
  });
}

Tensor pixel_cross_entropy(const Tensor &logits, const GridU8 &target, const GridU8 *region) {
  return seg_op(as_batch(logits), {&target}, {region}, false, true, nullptr);
}

Tensor seg_base_loss(const Tensor &logits, const GridU8 &target) {
  return seg_op(as_batch(logits), {&target}, {nullptr}, true, true, nullptr);
}

Tensor masked_seg_loss(const Tensor &logits, const GridU8 &target, const GridU8 &region, LossFlags *flags) {
  return seg_op(as_batch(logits), {&target}, {&region}, true, true, flags);
}

Tensor seg_loss_batch(const Tensor &logits, const std::vector<const GridU8 *> &targets,
                      const std::vector<const GridU8 *> &regions, LossFlags *flags) {
  return seg_op(logits, targets, regions, true, true, flags);
}

double focal_term(double p_t, double focusing, double weight) {
  if (p_t >= 1.0)
    return 0.0;
  return -weight * std::pow(1.0 - p_t, focusing) * std::log(p_t);
}

Tensor focal_loss(const Tensor &probs, const std::vector<int> &targets, const FocalParams &fp, LossFlags *flags) {
  if (probs.ndim() != 2)
    throw std::invalid_argument("focal_loss expects N x K probabilities, got " + nn::shape_str(probs.shape()));
  const int N = probs.dim(0), K = probs.dim(1);
  if (static_cast<int>(targets.size()) != N)
    throw std::invalid_argument("focal_loss: " + std::to_string(targets.size()) + " targets for batch of " +
                                std::to_string(N));
  if (!fp.class_weights.empty() && static_cast<int>(fp.class_weights.size()) != K)
    throw std::invalid_argument("focal_loss: class weight count does not match class count");
  if (fp.focusing < 0.0)
    throw std::invalid_argument("focal_loss: focusing must be >= 0");
  for (int t : targets)
    if (t < 0 || t >= K)
      throw std::invalid_argument("focal_loss: target class " + std::to_string(t) + " out of range");

  auto weight = [fp](int c) { return fp.class_weights.empty() ? 1.0 : fp.class_weights[c]; };
  double total = 0.0;
  std::vector<char> clamped(N, 0);
  for (int s = 0; s < N; ++s) {
    double p = probs[static_cast<std::size_t>(s) * K + targets[s]];
    if (p < fp.floor) {
      p = fp.floor;
      clamped[s] = 1;
      if (flags)
        ++flags->clamped_probs;
    }
    total += focal_term(p, fp.focusing, weight(targets[s]));
  }
  total /= N;

  detail_node *pp = probs.node();
  return Tensor::make_result({}, {total}, {probs}, [=](detail_node &n) {
    const double scale = n.grad[0] / N;
    const double g = fp.focusing;
    for (int s = 0; s < N; ++s) {
      if (clamped[s])
        continue;
      const std::size_t idx = static_cast<std::size_t>(s) * K + targets[s];
      const double p = pp->value[idx];
      if (p >= 1.0)
        continue;
      const double q = 1.0 - p;
      // d/dp of -(1-p)^g log p
      double d = -std::pow(q, g) / p;
      if (g != 0.0)
        d += g * std::pow(q, g - 1.0) * std::log(p);
      pp->grad[idx] += scale * weight(targets[s]) * d;
    }
  });
}

std::vector<double> inverse_frequency_weights(const std::vector<int> &labels, int n_cls) {
  std::vector<double> counts(n_cls, 0.0);
  for (int l : labels) {
    if (l < 0 || l >= n_cls)
      throw std::invalid_argument("inverse_frequency_weights: label out of range");
    counts[l] += 1.0;
  }
  std::vector<double> w(n_cls, 1.0);
  for (int c = 0; c < n_cls; ++c)
    if (counts[c] > 0)
      w[c] = static_cast<double>(labels.size()) / (n_cls * counts[c]);
  return w;
}

} // namespace reason::loss
