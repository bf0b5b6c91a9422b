#pragma once

#include "reason/harness/experiment.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace reason::harness {

/// Files written by emit_report (paths relative to the output directory):
///   fold_<k>_metrics.csv     metric,value for each successful fold k
///   aggregate_metrics.csv    metric,mean,std,n
///   confusion_matrix.csv     sum over folds, rows = truth
///   predictions.jsonl        one prediction per test study, with its fold
///   failures.csv             only when a fold failed
///   ablation_<axis>.csv      one per ablation table
///   ablation_<axis>.svg      line plot for the gamma, beta and u axes
///   comparisons.csv          paired t-tests, when present
///   gallery/*.png            raw / probability map / guided triptychs
///   run_report.json          the full report
/// Numbers are printed with 17 significant digits. Throws ValidationError when
/// the directory cannot be created or written.
std::vector<std::filesystem::path> emit_report(const RunReport &report, const std::filesystem::path &dir);

std::string format_number(double v);

/// Rows of a comma-separated file without quoting; the header is row 0.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path &path);

struct PlotSeries {
  std::string name;
  std::vector<double> y;
};

/// Static SVG line chart with one polyline per series over shared x values.
void write_line_plot_svg(const std::filesystem::path &path, const std::string &title, const std::string &x_label,
                         const std::vector<double> &x, const std::vector<PlotSeries> &series);

} // namespace reason::harness
