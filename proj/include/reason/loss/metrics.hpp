#pragma once

#include "reason/core/types.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace reason::loss {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int n_cls = kNumClasses);

  int n_cls() const { return n_; }
  long &at(int gt, int pred) { return counts_.at(static_cast<std::size_t>(gt) * n_ + pred); }
  long at(int gt, int pred) const { return counts_.at(static_cast<std::size_t>(gt) * n_ + pred); }
  long total() const;
  ConfusionMatrix &operator+=(const ConfusionMatrix &o);
  friend bool operator==(const ConfusionMatrix &, const ConfusionMatrix &) = default;

  std::string to_csv() const;
  static ConfusionMatrix from_csv(const std::string &text);
  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json &j);

private:
  int n_;
  std::vector<long> counts_;
};

struct MetricReport {
  double acc = 0;
  double precision_macro = 0;
  double recall_macro = 0;
  double f1_macro = 0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  /// Classes never predicted (precision set to 0) and classes absent from the
  /// ground truth (recall set to 0).
  std::vector<int> no_predicted;
  std::vector<int> no_actual;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json &j);
};

ConfusionMatrix confusion(const std::vector<int> &preds, const std::vector<int> &gts, int n_cls = kNumClasses);

/// Accuracy and one-vs-rest per-class precision/recall/F1 with unweighted
/// macro averages. Throws on an empty matrix.
MetricReport metrics(const ConfusionMatrix &cm);

/// 2|P & G| / (|P| + |G|); 1 when both masks are empty.
double dsc(const SegmentationMask &pred, const SegmentationMask &gt);
double dsc(const GridU8 &pred, const GridU8 &gt);

} // namespace reason::loss
