#include "reason/nn/batch.hpp"

#include <algorithm>
#include <stdexcept>

namespace reason::nn {

Tensor image_batch(const std::vector<const GridF *> &images) {
  if (images.empty())
    throw std::invalid_argument("image_batch: empty batch");
  const int H = images[0]->rows(), W = images[0]->cols();
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<double> v(images.size() * hw);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->rows() != H || images[i]->cols() != W)
      throw std::invalid_argument("image_batch: images differ in size");
    std::copy(images[i]->values().begin(), images[i]->values().end(), v.begin() + i * hw);
  }
  return Tensor::from({static_cast<int>(images.size()), 1, H, W}, std::move(v));
}

GridF plane(const Tensor &t, int n, int c) {
  if (t.ndim() != 4)
    throw std::invalid_argument("plane: expected a 4-D tensor, got " + shape_str(t.shape()));
  const int C = t.dim(1), H = t.dim(2), W = t.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const auto d = t.data();
  const auto begin = d.begin() + (static_cast<std::size_t>(n) * C + c) * hw;
  return GridF(H, W, std::vector<double>(begin, begin + hw));
}

} // namespace reason::nn
