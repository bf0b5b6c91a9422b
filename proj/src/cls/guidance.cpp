#include "reason/cls/guidance.hpp"
#include "reason/core/errors.hpp"

#include <stdexcept>

namespace reason::cls {

GridF apply_guidance(const GridF &x, const ProbabilityMap &p, double gamma) {
  if (!x.same_shape(p.foreground))
    throw std::invalid_argument("apply_guidance: image is " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + ", probability map " +
                                std::to_string(p.foreground.rows()) + "x" + std::to_string(p.foreground.cols()));
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw ValidationError("guidance strength gamma must be in [0, 1], got " + std::to_string(gamma));
  GridF out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = x[i] - gamma * x[i] * (1.0 - p.foreground[i]);
  return out;
}

UltrasoundImage apply_guidance(const UltrasoundImage &x, const ProbabilityMap &p, double gamma) {
  UltrasoundImage out = x;
  out.pixels = apply_guidance(x.pixels, p, gamma);
  return out;
}

ProbabilityMap unit_probability_map(int rows, int cols) { return ProbabilityMap{GridF(rows, cols, 1.0)}; }

} // namespace reason::cls
