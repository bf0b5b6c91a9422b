#pragma once

#include "reason/core/types.hpp"
#include "reason/nn/checkpoint.hpp"
#include "reason/nn/segnet.hpp"
#include "reason/seg/bcp.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace reason::seg {

struct SegTrainConfig {
  nn::SegNetConfig net;
  long iterations = 30000;    // semi-supervised iterations
  double pretrain_fraction = 0.1; // supervised pretraining budget, share of `iterations`
  int labeled_batch = 12;
  int unlabeled_batch = 12;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_power = 0.9;
  double ema_alpha = 0.99;
  AreaBand patch_band{0.2, 0.3};
  /// Validation DSC is computed this often; 0 picks 10 evaluations per phase.
  long eval_every = 0;
  std::uint64_t seed = 0;

  long pretrain_iterations() const;
  void validate() const;
};

void to_json(nlohmann::json &j, const SegTrainConfig &c);
void from_json(const nlohmann::json &j, SegTrainConfig &c);

struct SegLogRow {
  long iteration = 0;
  double l_s = 0;
  double l_c = 0;
  double lr = 0;
};

struct SegTrainResult {
  nn::Checkpoint checkpoint;
  std::vector<SegLogRow> log;
  double best_val_dsc = -1; // -1 when nothing was validated
  long best_iteration = 0;
};

/// Image/mask pairs of both views from records that carry masks.
struct LabeledImage {
  const GridF *image;
  const GridU8 *mask;
};
std::vector<LabeledImage> labeled_images(const std::vector<StudyRecord> &records);
std::vector<const GridF *> all_images(const std::vector<StudyRecord> &records);

/// Mean per-image DSC of thresholded probability maps against the masks.
double mean_dsc(const nn::SegNet &net, const std::vector<LabeledImage> &data);

/// SGD on the Dice + CE loss over labeled images of both views. Returns the
/// best-validation-DSC parameters (the final ones when val has no masks).
/// Throws TrainingError on a non-finite loss.
SegTrainResult pretrain_supervised(const SegTrainConfig &cfg, const std::vector<StudyRecord> &train_labeled,
                                   const std::vector<StudyRecord> &val, std::optional<long> iterations = {});

/// Mean-teacher training with bidirectional copy-paste, starting student and
/// teacher from `pretrained`. Returns the teacher with the best validation DSC.
SegTrainResult train_semi_supervised(const SegTrainConfig &cfg, const DatasetSplit &split,
                                     const nn::Checkpoint &pretrained);

/// Writes iteration, L_s, L_c and lr rows.
void write_loss_log(const std::vector<SegLogRow> &log, const std::filesystem::path &path);

/// 16-bit grayscale PNG, value = round(p * 65535).
void export_probability_map(const ProbabilityMap &p, const std::filesystem::path &path);

} // namespace reason::seg
