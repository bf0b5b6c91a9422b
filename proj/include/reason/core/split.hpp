#pragma once

#include "reason/core/types.hpp"

#include <cstdint>
#include <vector>

namespace reason {

struct SplitRatios {
  int train = 7;
  int val = 2;
  int test = 1;
};

/// Patient-level train/val/test split. Val and test patient counts are the
/// nearest integers to their ratio shares (at least one each), train takes the
/// remainder. When labeled_fraction < 1, that share of training patients
/// (at least one) goes to train_labeled and the rest to train_unlabeled.
DatasetSplit patient_level_split(const std::vector<StudyRecord> &records, SplitRatios ratios, std::uint64_t seed,
                                 double labeled_fraction = 1.0);

struct KFoldOptions {
  int k = 5;
  /// Share of the non-held-out patients used for validation (2/9 keeps 7:2 between train and val).
  double val_share = 2.0 / 9.0;
  double labeled_fraction = 1.0;
};

/// k splits whose test sets partition the patients; fold sizes differ by at most one.
std::vector<DatasetSplit> kfold_patient_partition(const std::vector<StudyRecord> &records, KFoldOptions opts,
                                                  std::uint64_t seed);

/// Sorted distinct patient ids.
std::vector<std::string> patient_ids(const std::vector<StudyRecord> &records);

/// Moves a patient-wise share of `train` into labeled/unlabeled lists.
void assign_labeled_subset(const std::vector<StudyRecord> &train, double labeled_fraction, std::uint64_t seed,
                           DatasetSplit &out);

} // namespace reason
