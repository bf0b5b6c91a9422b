#pragma once

#include "reason/core/grid.hpp"

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reason {

enum class View { RLD, SUP };

/// Gastric content grade. Class I: V <= 50 mL, II: 50 < V <= 100 mL, III: V > 100 mL.
enum class ClassLabel { I = 0, II = 1, III = 2 };

inline constexpr int kNumClasses = 3;

std::string_view to_string(View v);
std::string_view to_string(ClassLabel c);
View parse_view(std::string_view s);
ClassLabel parse_label(std::string_view s);
inline int class_index(ClassLabel c) { return static_cast<int>(c); }
ClassLabel label_from_index(int idx);

/// Grade implied by a reference volume.
ClassLabel label_for_volume(double volume_ml);

struct UltrasoundImage {
  GridF pixels; // intensities in [0,1]
  View view = View::SUP;
  std::string patient_id;
  std::string study_id;
};

struct SegmentationMask {
  GridU8 pixels; // 1 = gastric antrum
};

struct ProbabilityMap {
  GridF foreground;
};

struct StudyRecord {
  std::string patient_id;
  std::string study_id;
  UltrasoundImage rld;
  UltrasoundImage sup;
  ClassLabel label = ClassLabel::I;
  std::optional<double> volume_ml;
  std::optional<SegmentationMask> rld_mask;
  std::optional<SegmentationMask> sup_mask;

  const UltrasoundImage &image(View v) const { return v == View::RLD ? rld : sup; }
  const std::optional<SegmentationMask> &mask(View v) const { return v == View::RLD ? rld_mask : sup_mask; }
};

struct DatasetSplit {
  std::vector<StudyRecord> train_labeled;
  std::vector<StudyRecord> train_unlabeled;
  std::vector<StudyRecord> val;
  std::vector<StudyRecord> test;

  std::vector<StudyRecord> train() const;
};

/// Problems found by validate_record; empty when the record is valid.
std::vector<std::string> validate_record(const StudyRecord &rec, int expected_side = 0);

bool is_binary(const GridU8 &g);
bool in_unit_interval(const GridF &g);

} // namespace reason
