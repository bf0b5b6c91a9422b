#pragma once

#include "reason/core/grid.hpp"
#include "reason/nn/tensor.hpp"

#include <vector>

namespace reason::loss {

inline constexpr double kDiceEps = 1e-5;
inline constexpr double kProbFloor = 1e-8;

/// Counters for the conventions that replace undefined values.
struct LossFlags {
  int empty_regions = 0;  // masked loss over an all-zero region, defined as 0
  int clamped_probs = 0;  // focal target probability raised to the floor
};

/// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps) over pixels where region
/// is 1 (all pixels when region is null). fg_prob: H x W.
nn::Tensor dice_loss(const nn::Tensor &fg_prob, const GridU8 &target, const GridU8 *region = nullptr);

/// Mean over pixels of -log softmax at the target class. logits: 2 x H x W.
nn::Tensor pixel_cross_entropy(const nn::Tensor &logits, const GridU8 &target, const GridU8 *region = nullptr);

/// Dice on the foreground softmax plus pixel cross-entropy. logits: 2 x H x W.
nn::Tensor seg_base_loss(const nn::Tensor &logits, const GridU8 &target);

/// seg_base_loss restricted to region pixels. An empty region gives 0 and
/// increments flags->empty_regions.
nn::Tensor masked_seg_loss(const nn::Tensor &logits, const GridU8 &target, const GridU8 &region,
                           LossFlags *flags = nullptr);

/// Batched masked_seg_loss, averaged over samples. logits: N x 2 x H x W.
/// Targets and regions are referenced by the graph and must outlive backward().
/// A null region entry means the full image.
nn::Tensor seg_loss_batch(const nn::Tensor &logits, const std::vector<const GridU8 *> &targets,
                          const std::vector<const GridU8 *> &regions, LossFlags *flags = nullptr);

struct FocalParams {
  double focusing = 2.0;
  std::vector<double> class_weights; // empty = unit weights
  double floor = kProbFloor;
};

/// -w_t (1 - p_t)^focusing log p_t for a single probability.
double focal_term(double p_t, double focusing, double weight = 1.0);

/// Focal loss averaged over the batch. probs: N x K rows on the simplex.
nn::Tensor focal_loss(const nn::Tensor &probs, const std::vector<int> &targets, const FocalParams &fp,
                      LossFlags *flags = nullptr);

/// w_c = N / (K * n_c); classes without samples get weight 1.
std::vector<double> inverse_frequency_weights(const std::vector<int> &labels, int n_cls);

} // namespace reason::loss
