#pragma once

#include "reason/cls/dbfc.hpp"
#include "reason/harness/config.hpp"
#include "reason/loss/metrics.hpp"
#include "reason/loss/stats.hpp"
#include "reason/nn/checkpoint.hpp"
#include "reason/seg/trainer.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace reason::harness {

/// Manifest records when cfg.manifest is set, else phantoms generated from
/// cfg.phantom with cfg.data_seed().
std::vector<StudyRecord> load_or_generate_records(const ExperimentConfig &cfg);

/// Fold splits for the config: k-fold patient partition with 7:2 train/val
/// inside the non-held-out patients and the labeled share of training patients.
std::vector<DatasetSplit> make_folds(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records);

struct Stage1Result {
  nn::Checkpoint pretrain;
  nn::Checkpoint teacher;
  double pretrain_test_dsc = 0;
  double teacher_test_dsc = 0;
  double teacher_val_dsc = 0;
  std::vector<seg::SegLogRow> log;
};

/// Supervised pretraining on the labeled share, then mean-teacher training.
Stage1Result run_stage1(const seg::SegTrainConfig &cfg, const DatasetSplit &split);

/// Stage-1 results keyed by fold. Only valid for one (records, seg config,
/// seed) combination; the harness never checks this.
struct TeacherCache {
  std::map<int, Stage1Result> folds;
};

/// fold_<k>_pretrain.ckpt, fold_<k>_teacher.ckpt and fold_<k>_stage1.json per fold.
void save_teacher_cache(const TeacherCache &cache, const std::filesystem::path &dir);
/// Loads every complete fold found in dir; a missing dir gives an empty cache.
TeacherCache load_teacher_cache(const std::filesystem::path &dir);

struct GalleryItem {
  std::string study_id;
  View view = View::RLD;
  GridF raw;
  ProbabilityMap p;
  double gamma = 0;
};

struct FoldResult {
  int fold = 0;
  bool ok = true;
  std::string error;
  loss::MetricReport metrics;
  loss::ConfusionMatrix confusion;
  /// Test DSC of the stage-1 teacher and of the supervised-only network.
  std::optional<double> seg_dsc;
  std::optional<double> seg_pretrain_dsc;
  double best_val_acc = 0;
  int best_epoch = 0;
  std::size_t added_parameters = 0;
  std::vector<cls::StudyPrediction> predictions;
};

struct MetricSummary {
  std::string name;
  std::vector<double> values; // one per successful fold
  double mean = 0;
  double std = 0; // sample std, n - 1
};

/// Named per-fold scalar metrics in report order: acc, precision_macro,
/// recall_macro, f1_macro, per-class precision/recall/f1, then seg_dsc and
/// seg_pretrain_dsc when present.
std::vector<std::pair<std::string, double>> fold_metric_values(const FoldResult &f);

struct AblationRow {
  std::string value;
  double acc = 0, precision = 0, recall = 0, f1 = 0;
  double acc_std = 0, precision_std = 0, recall_std = 0, f1_std = 0;
  std::optional<std::size_t> delta_params;
  int folds_ok = 0;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;
};

struct MetricComparison {
  std::string metric;
  loss::TTestResult test;
  bool significant_01 = false;
  bool significant_05 = false;
};

struct Comparison {
  std::string label_a;
  std::string label_b;
  std::vector<MetricComparison> metrics;
};

struct RunReport {
  std::string label;
  nlohmann::json config;
  std::vector<FoldResult> folds;
  std::vector<AblationTable> ablations;
  std::vector<Comparison> comparisons;
  /// Not serialized.
  std::vector<GalleryItem> gallery;

  /// Mean and std over successful folds, recomputed on every call.
  std::vector<MetricSummary> aggregate() const;
  /// Sum over successful folds.
  loss::ConfusionMatrix confusion_sum() const;
  int folds_ok() const;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json &j);
};

using ProgressFn = std::function<void(const std::string &)>;

struct CvOptions {
  /// Reused and filled when given.
  TeacherCache *cache = nullptr;
  /// Subset of fold indices; empty runs all.
  std::vector<int> folds;
  /// Test studies per fold placed in the gallery (both views each).
  int gallery_per_fold = 0;
  /// Replaces the classifier's epoch count (ablation smoke runs).
  std::optional<int> epochs_override;
  ProgressFn progress;
};

/// Trains both stages per fold (stage 1 only when PMG is on or a cached
/// teacher exists) and evaluates on the held-out patients. A fold that throws
/// is recorded with ok = false and the run continues.
RunReport run_cross_validation(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records,
                               const CvOptions &opts = {});

/// RLD-only and SUP-only runs whose per-fold metrics are averaged and whose
/// confusion matrices are added.
RunReport run_single_view_average(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records,
                                  const CvOptions &opts = {});

enum class AblationAxis { pmg, dbfc, gamma, beta, u, fusion, backbone };
std::string_view to_string(AblationAxis a);
AblationAxis parse_axis(std::string_view s);

/// Config for one ablation cell. Throws ValidationError on an illegal value.
ExperimentConfig apply_ablation_value(const ExperimentConfig &base, AblationAxis axis, const std::string &value);

/// One cross-validated run per value with everything else fixed. Every value
/// is checked before any training starts.
AblationTable run_ablation(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records, AblationAxis axis,
                           const std::vector<std::string> &values, const CvOptions &opts = {});

/// Paired t-tests of acc, precision_macro, recall_macro and f1_macro over
/// folds. Throws ValidationError unless both reports succeeded on the same folds.
Comparison compare_methods(const RunReport &a, const RunReport &b);

} // namespace reason::harness
