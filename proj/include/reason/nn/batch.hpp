#pragma once

#include "reason/core/grid.hpp"
#include "reason/nn/tensor.hpp"

#include <vector>

namespace reason::nn {

/// Stacks equally sized grids into an N x 1 x H x W input tensor.
Tensor image_batch(const std::vector<const GridF *> &images);

/// Plane (n, c) of an N x C x H x W tensor as a grid.
GridF plane(const Tensor &t, int n, int c);

} // namespace reason::nn
