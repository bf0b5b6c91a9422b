#pragma once

#include "reason/core/types.hpp"

namespace reason::cls {

/// x' = (1 - gamma) x + gamma (x * p), evaluated as x - gamma x (1 - p) so that
/// gamma = 0 and p = 1 return x exactly.
GridF apply_guidance(const GridF &x, const ProbabilityMap &p, double gamma);
UltrasoundImage apply_guidance(const UltrasoundImage &x, const ProbabilityMap &p, double gamma);

/// p = 1 everywhere; turns guidance off.
ProbabilityMap unit_probability_map(int rows, int cols);

} // namespace reason::cls
