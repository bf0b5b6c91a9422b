#pragma once

#include <vector>

namespace reason::loss {

struct TTestResult {
  double t = 0;
  double p = 1;
  double mean_diff = 0;
  int dof = 0;
  /// Differences have zero variance; p is 1 for a zero mean difference, else 0.
  bool degenerate = false;
};

/// Two-sided paired t-test on a - b with n - 1 degrees of freedom.
TTestResult paired_t_test(const std::vector<double> &a, const std::vector<double> &b);

double mean(const std::vector<double> &v);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_std(const std::vector<double> &v);

} // namespace reason::loss
