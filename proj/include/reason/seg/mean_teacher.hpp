#pragma once

#include "reason/core/types.hpp"
#include "reason/nn/checkpoint.hpp"
#include "reason/nn/segnet.hpp"

#include <vector>

namespace reason::seg {

struct MTState {
  std::vector<double> student_params;
  std::vector<double> teacher_params;
  long iteration = 0;
  double alpha = 0.99;
};

/// teacher <- alpha * teacher + (1 - alpha) * student; iteration + 1.
MTState ema_update(MTState state);
/// In-place form used by the training loop.
void ema_update_inplace(MTState &state);

/// Per-pixel argmax of the teacher's two-class output, computed without
/// recording gradients. Ties go to background.
SegmentationMask teacher_pseudo_label(const nn::SegNet &teacher, const GridF &x_u);
std::vector<GridU8> teacher_pseudo_labels(const nn::SegNet &teacher, const std::vector<const GridF *> &x_u);

/// Foreground channel of the two-class softmax.
ProbabilityMap predict_probability_map(const nn::SegNet &net, const GridF &image);
std::vector<ProbabilityMap> predict_probability_maps(const nn::SegNet &net, const std::vector<const GridF *> &images,
                                                     int batch = 16);
/// Rebuilds the network from a "segnet" checkpoint. Throws ValidationError on a
/// kind, config or size mismatch with the image.
ProbabilityMap predict_probability_map(const nn::Checkpoint &teacher, const GridF &image);

/// Network described by a "segnet" checkpoint, loaded with its parameters.
std::unique_ptr<nn::SegNet> segnet_from_checkpoint(const nn::Checkpoint &ck);

/// Hard mask p > 0.5.
GridU8 threshold(const ProbabilityMap &p);

} // namespace reason::seg
