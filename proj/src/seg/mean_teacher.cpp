#include "reason/seg/mean_teacher.hpp"
#include "reason/core/errors.hpp"
#include "reason/nn/batch.hpp"

#include <cmath>
#include <stdexcept>

namespace reason::seg {

using nn::Tensor;

void ema_update_inplace(MTState &s) {
  if (s.student_params.size() != s.teacher_params.size())
    throw std::invalid_argument("ema_update: student has " + std::to_string(s.student_params.size()) +
                                " parameters, teacher " + std::to_string(s.teacher_params.size()));
  if (!(s.alpha >= 0.0 && s.alpha < 1.0))
    throw std::invalid_argument("ema_update: alpha must be in [0, 1)");
  const double a = s.alpha, b = 1.0 - s.alpha;
  for (std::size_t i = 0; i < s.teacher_params.size(); ++i)
    s.teacher_params[i] = a * s.teacher_params[i] + b * s.student_params[i];
  ++s.iteration;
}

MTState ema_update(MTState state) {
  ema_update_inplace(state);
  return state;
}

namespace {

// Runs the net without a graph over chunks of images; calls f(index, logits, row).
template <typename F> void forward_chunks(const nn::SegNet &net, const std::vector<const GridF *> &images, int batch, F f) {
  nn::NoGradGuard guard;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t end = std::min(images.size(), start + batch);
    const std::vector<const GridF *> chunk(images.begin() + start, images.begin() + end);
    const Tensor logits = net.forward(nn::image_batch(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i)
      f(start + i, logits, static_cast<int>(i));
  }
}

} // namespace

std::vector<GridU8> teacher_pseudo_labels(const nn::SegNet &teacher, const std::vector<const GridF *> &x_u) {
  std::vector<GridU8> out(x_u.size());
  forward_chunks(teacher, x_u, 16, [&](std::size_t idx, const Tensor &logits, int row) {
    const int H = logits.dim(2), W = logits.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const double *l0 = logits.data().data() + 2 * row * hw;
    GridU8 m(H, W);
    for (std::size_t i = 0; i < hw; ++i)
      m[i] = l0[hw + i] > l0[i] ? 1 : 0;
    out[idx] = std::move(m);
  });
  return out;
}

SegmentationMask teacher_pseudo_label(const nn::SegNet &teacher, const GridF &x_u) {
  return SegmentationMask{std::move(teacher_pseudo_labels(teacher, {&x_u}).front())};
}

std::vector<ProbabilityMap> predict_probability_maps(const nn::SegNet &net, const std::vector<const GridF *> &images,
                                                     int batch) {
  std::vector<ProbabilityMap> out(images.size());
  forward_chunks(net, images, batch, [&](std::size_t idx, const Tensor &logits, int row) {
    const int H = logits.dim(2), W = logits.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const double *l0 = logits.data().data() + 2 * row * hw;
    GridF p(H, W);
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = 1.0 / (1.0 + std::exp(l0[i] - l0[hw + i]));
      if (!std::isfinite(v))
        throw TrainingError("probability map: non-finite network output");
      p[i] = v;
    }
    out[idx].foreground = std::move(p);
  });
  return out;
}

ProbabilityMap predict_probability_map(const nn::SegNet &net, const GridF &image) {
  return std::move(predict_probability_maps(net, {&image}).front());
}

std::unique_ptr<nn::SegNet> segnet_from_checkpoint(const nn::Checkpoint &ck) {
  if (ck.kind != "segnet")
    throw ValidationError("expected a segnet checkpoint, got kind '" + ck.kind + "'");
  if (!ck.config.contains("net"))
    throw ValidationError("segnet checkpoint lacks a network config");
  const auto cfg = ck.config.at("net").get<nn::SegNetConfig>();
  cfg.validate();
  auto net = nn::build_segnet(cfg, ck.seed);
  if (net->parameter_count() != ck.params.size())
    throw ValidationError("segnet checkpoint holds " + std::to_string(ck.params.size()) +
                          " parameters but its config needs " + std::to_string(net->parameter_count()));
  nn::load_parameters(*net, ck.params);
  return net;
}

ProbabilityMap predict_probability_map(const nn::Checkpoint &teacher, const GridF &image) {
  auto net = segnet_from_checkpoint(teacher);
  if (image.rows() != image.cols())
    throw ValidationError("probability map: image must be square");
  net->config().check_side(image.rows());
  return predict_probability_map(*net, image);
}

GridU8 threshold(const ProbabilityMap &p) {
  GridU8 m(p.foreground.rows(), p.foreground.cols());
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = p.foreground[i] > 0.5 ? 1 : 0;
  return m;
}

} // namespace reason::seg
