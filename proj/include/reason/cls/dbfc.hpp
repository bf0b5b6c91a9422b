#pragma once

#include "reason/cls/fusion.hpp"
#include "reason/core/types.hpp"
#include "reason/loss/losses.hpp"
#include "reason/nn/checkpoint.hpp"
#include "reason/nn/classifier.hpp"
#include "reason/nn/segnet.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reason::cls {

/// dual: both views and a fusion head. rld_only / sup_only: one classifier on
/// one view (the single-view baseline arms).
enum class BranchMode { dual, rld_only, sup_only };

std::string_view to_string(BranchMode m);
BranchMode parse_branch_mode(std::string_view s);

struct DbfcConfig {
  nn::ClassifierConfig backbone;
  double gamma = 0.5;
  FusionSpec fusion;
  double u = 0.3;
  double focusing = 2.0;
  /// Empty means inverse-frequency weights from the training labels.
  std::vector<double> class_weights;
  int epochs = 120;
  int batch_size = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// false substitutes p = 1 for the probability maps.
  bool pmg = true;
  BranchMode mode = BranchMode::dual;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json &j, const DbfcConfig &c);
void from_json(const nlohmann::json &j, DbfcConfig &c);

struct DualOutputs {
  nn::Tensor y_r; // undefined in sup_only mode
  nn::Tensor y_s; // undefined in rld_only mode
  nn::Tensor y_f; // the branch output itself in single-view modes
};

/// Two independent branch classifiers plus a fusion head (dual mode), or a
/// single classifier.
class DualBranchModel : public nn::Module {
public:
  DualBranchModel(const DbfcConfig &cfg, std::uint64_t seed);

  /// x_r, x_s: N x 1 x H x W. The unused view may be undefined in single modes.
  DualOutputs forward(const nn::Tensor &x_r, const nn::Tensor &x_s) const;

  const DbfcConfig &config() const { return cfg_; }
  const nn::Classifier *rld_branch() const { return rld_; }
  const nn::Classifier *sup_branch() const { return sup_; }
  const FusionHead *fusion() const { return fusion_; }
  FusionHead *fusion() { return fusion_; }
  /// Parameters added on top of two branch classifiers with weighted-logits fusion.
  std::size_t added_parameters() const { return fusion_ ? count_parameters(*fusion_) : 0; }

private:
  DbfcConfig cfg_;
  nn::Classifier *rld_ = nullptr;
  nn::Classifier *sup_ = nullptr;
  FusionHead *fusion_ = nullptr;
};

/// Focal(y_f) + u [Focal(y_r) + Focal(y_s)], batch means. u = 0 keeps only the
/// fused term.
nn::Tensor dbfc_loss(const nn::Tensor &y_f, const nn::Tensor &y_r, const nn::Tensor &y_s,
                     const std::vector<int> &targets, double u, const loss::FocalParams &fp,
                     loss::LossFlags *flags = nullptr);

/// A study ready for the classifier: guided images of both views.
struct GuidedStudy {
  std::string patient_id;
  std::string study_id;
  GridF rld;
  GridF sup;
  int label = 0;
};

struct StudyMaps {
  ProbabilityMap rld;
  ProbabilityMap sup;
};

/// Teacher probability maps for both views of every record.
std::vector<StudyMaps> compute_probability_maps(const nn::SegNet &teacher, const std::vector<StudyRecord> &records);

/// Applies guidance with the given maps; null maps (or pmg off) use p = 1.
std::vector<GuidedStudy> guide_studies(const std::vector<StudyRecord> &records, const std::vector<StudyMaps> *maps,
                                       double gamma);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_acc = 0;
};

struct DbfcTrainResult {
  nn::Checkpoint checkpoint;
  std::vector<EpochRecord> trajectory;
  double best_val_acc = -1;
  int best_epoch = 0;
  std::size_t added_parameters = 0;
  loss::LossFlags flags;
};

/// SGD on dbfc_loss with best-validation-accuracy selection.
DbfcTrainResult train_dbfc_prepared(const DbfcConfig &cfg, const std::vector<GuidedStudy> &train,
                                    const std::vector<GuidedStudy> &val);

/// Computes probability maps once with the teacher (none when cfg.pmg is off
/// or teacher is null), guides the images and trains.
DbfcTrainResult train_dbfc(const DbfcConfig &cfg, const DatasetSplit &split, const nn::Checkpoint *teacher);

std::unique_ptr<DualBranchModel> model_from_checkpoint(const nn::Checkpoint &ck);

struct StudyPrediction {
  std::string patient_id;
  std::string study_id;
  int cls = 0;
  ClassProbabilities y_f, y_r, y_s;
  double gamma = 0;
  std::optional<double> beta;

  nlohmann::json to_json() const;
};

std::vector<StudyPrediction> predict_guided(const DualBranchModel &model, const std::vector<GuidedStudy> &studies,
                                            int batch = 16);

/// Both views are required. The class is the argmax of y_f, ties to the lower index.
StudyPrediction predict_study(const nn::Checkpoint &classifier, const nn::Checkpoint &teacher,
                              const StudyRecord &study);

/// Raw image, probability map and guided image side by side, written as 8-bit PNG.
void export_guidance_triptych(const GridF &raw, const ProbabilityMap &p, double gamma,
                              const std::filesystem::path &path);

} // namespace reason::cls
