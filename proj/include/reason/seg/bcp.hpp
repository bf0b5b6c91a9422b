#pragma once

#include "reason/core/types.hpp"
#include "reason/loss/losses.hpp"
#include "reason/nn/segnet.hpp"

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace reason::seg {

struct AreaBand {
  double lo = 0.2;
  double hi = 0.3;
};

struct PatchMask {
  GridU8 pixels; // 1 inside the rectangle
  int top = 0, left = 0, height = 0, width = 0;

  double area_fraction() const;
  /// 1 - m
  GridU8 complement() const;
};

/// Axis-aligned rectangle, aspect ratio (height/width) in [1/2, 2] and area
/// fraction in the band, drawn uniformly over feasible integer sizes and then
/// uniformly over positions. Throws ValidationError when no size is feasible.
PatchMask sample_patch_mask(int H, int W, AreaBand band, std::uint64_t seed);
PatchMask sample_patch_mask(int H, int W, AreaBand band, std::mt19937_64 &rng);

/// x_ul = x_u*m + x_l*(1-m), x_lu = x_l*m + x_u*(1-m)
std::pair<GridF, GridF> bcp_compose(const GridF &x_u, const GridF &x_l, const PatchMask &m);
/// The same mixing applied to label maps.
std::pair<GridU8, GridU8> bcp_compose(const GridU8 &y_u, const GridU8 &y_l, const PatchMask &m);

struct BcpSample {
  const GridF *x_ul = nullptr;
  const GridF *x_lu = nullptr;
  const GridU8 *y_l = nullptr;
  const GridU8 *y_u = nullptr;
  const PatchMask *m = nullptr;
};

struct BcpLoss {
  nn::Tensor total; // L_s + L_c, differentiable w.r.t. student parameters
  double l_s = 0;
  double l_c = 0;
  loss::LossFlags flags;
};

/// L_s = masked(pred(x_ul), y_l, 1-m) + masked(pred(x_lu), y_l, m)
/// L_c = masked(pred(x_ul), y_u, m) + masked(pred(x_lu), y_u, 1-m)
/// Each term is averaged over the batch. All referenced grids must outlive
/// backward() on the result.
BcpLoss bcp_training_loss(const nn::SegNet &student, const std::vector<BcpSample> &batch,
                          std::vector<GridU8> &complement_storage);

/// Single composite pair.
BcpLoss bcp_training_loss(const nn::SegNet &student, const GridF &x_ul, const GridF &x_lu, const GridU8 &y_l,
                          const GridU8 &y_u, const PatchMask &m, std::vector<GridU8> &complement_storage);

} // namespace reason::seg
