#include "reason/seg/bcp.hpp"
#include "reason/core/errors.hpp"
#include "reason/nn/batch.hpp"
#include "reason/nn/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace reason::seg {

using nn::Tensor;

double PatchMask::area_fraction() const {
  return static_cast<double>(height) * width / (static_cast<double>(pixels.rows()) * pixels.cols());
}

GridU8 PatchMask::complement() const {
  GridU8 c(pixels.rows(), pixels.cols());
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = 1 - pixels[i];
  return c;
}

PatchMask sample_patch_mask(int H, int W, AreaBand band, std::mt19937_64 &rng) {
  if (H <= 0 || W <= 0)
    throw ValidationError("patch mask needs a positive image size");
  if (!(band.lo > 0 && band.hi <= 1 && band.lo <= band.hi))
    throw ValidationError("patch area band must satisfy 0 < lo <= hi <= 1");
  const double total = static_cast<double>(H) * W;
  std::vector<std::pair<int, int>> sizes;
  for (int h = 1; h <= H; ++h)
    for (int w = 1; w <= W; ++w) {
      if (2 * h < w || h > 2 * w)
        continue;
      const double f = h * static_cast<double>(w) / total;
      if (f >= band.lo - 1e-12 && f <= band.hi + 1e-12)
        sizes.emplace_back(h, w);
    }
  if (sizes.empty())
    throw ValidationError("no rectangle with aspect ratio in [1/2, 2] has an area fraction in [" +
                          std::to_string(band.lo) + ", " + std::to_string(band.hi) + "] on a " + std::to_string(H) +
                          "x" + std::to_string(W) + " grid");
  const auto [h, w] = sizes[std::uniform_int_distribution<std::size_t>(0, sizes.size() - 1)(rng)];
  PatchMask m;
  m.height = h;
  m.width = w;
  m.top = std::uniform_int_distribution<int>(0, H - h)(rng);
  m.left = std::uniform_int_distribution<int>(0, W - w)(rng);
  m.pixels = GridU8(H, W);
  for (int r = m.top; r < m.top + h; ++r)
    for (int c = m.left; c < m.left + w; ++c)
      m.pixels(r, c) = 1;
  return m;
}

PatchMask sample_patch_mask(int H, int W, AreaBand band, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_patch_mask(H, W, band, rng);
}

namespace {

template <typename T> std::pair<Grid<T>, Grid<T>> compose(const Grid<T> &a, const Grid<T> &b, const PatchMask &m) {
  if (!a.same_shape(b) || !a.same_shape(m.pixels))
    throw std::invalid_argument("bcp_compose: shape mismatch");
  Grid<T> ab(a.rows(), a.cols()), ba(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    // Selection rather than arithmetic keeps provenance bit-exact.
    ab[i] = m.pixels[i] ? a[i] : b[i];
    ba[i] = m.pixels[i] ? b[i] : a[i];
  }
  return {std::move(ab), std::move(ba)};
}

} // namespace

std::pair<GridF, GridF> bcp_compose(const GridF &x_u, const GridF &x_l, const PatchMask &m) {
  return compose(x_u, x_l, m);
}

std::pair<GridU8, GridU8> bcp_compose(const GridU8 &y_u, const GridU8 &y_l, const PatchMask &m) {
  return compose(y_u, y_l, m);
}

BcpLoss bcp_training_loss(const nn::SegNet &student, const std::vector<BcpSample> &batch,
                          std::vector<GridU8> &complement_storage) {
  if (batch.empty())
    throw std::invalid_argument("bcp_training_loss: empty batch");
  const std::size_t B = batch.size();
  std::vector<const GridF *> inputs(2 * B);
  complement_storage.clear();
  complement_storage.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto &s = batch[b];
    if (!s.x_ul || !s.x_lu || !s.y_l || !s.y_u || !s.m)
      throw std::invalid_argument("bcp_training_loss: incomplete sample");
    inputs[b] = s.x_ul;
    inputs[B + b] = s.x_lu;
    complement_storage.push_back(s.m->complement());
  }
  const Tensor logits = student.forward(nn::image_batch(inputs));

  // Rows 0..B-1 are x_ul, rows B..2B-1 are x_lu; averaging over all 2B rows
  // halves the sum of the two per-composite batch means.
  std::vector<const GridU8 *> yl(2 * B), yu(2 * B), reg_s(2 * B), reg_c(2 * B);
  for (std::size_t b = 0; b < B; ++b) {
    yl[b] = yl[B + b] = batch[b].y_l;
    yu[b] = yu[B + b] = batch[b].y_u;
    reg_s[b] = &complement_storage[b];
    reg_s[B + b] = &batch[b].m->pixels;
    reg_c[b] = &batch[b].m->pixels;
    reg_c[B + b] = &complement_storage[b];
  }
  BcpLoss out;
  const Tensor ls = nn::scale(loss::seg_loss_batch(logits, yl, reg_s, &out.flags), 2.0);
  const Tensor lc = nn::scale(loss::seg_loss_batch(logits, yu, reg_c, &out.flags), 2.0);
  out.l_s = ls.item();
  out.l_c = lc.item();
  out.total = nn::add(ls, lc);
  return out;
}

BcpLoss bcp_training_loss(const nn::SegNet &student, const GridF &x_ul, const GridF &x_lu, const GridU8 &y_l,
                          const GridU8 &y_u, const PatchMask &m, std::vector<GridU8> &complement_storage) {
  return bcp_training_loss(student, {BcpSample{&x_ul, &x_lu, &y_l, &y_u, &m}}, complement_storage);
}

} // namespace reason::seg
