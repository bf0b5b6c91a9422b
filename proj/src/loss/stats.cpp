#include "reason/loss/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace reason::loss {

double mean(const std::vector<double> &v) {
  if (v.empty())
    return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double> &v) {
  if (v.size() < 2)
    return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v)
    ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

TTestResult paired_t_test(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: lengths " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  if (a.size() < 2)
    throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    d[i] = a[i] - b[i];
  TTestResult r;
  r.dof = static_cast<int>(d.size()) - 1;
  r.mean_diff = mean(d);
  const double sd = sample_std(d);
  // Differences that agree to rounding are treated as constant.
  const double tiny = 1e-14 * std::max(1.0, std::abs(r.mean_diff));
  if (sd <= tiny) {
    r.degenerate = true;
    const bool zero = std::abs(r.mean_diff) <= tiny;
    r.t = zero ? 0.0 : std::copysign(INFINITY, r.mean_diff);
    r.p = zero ? 1.0 : 0.0;
    return r;
  }
  r.t = r.mean_diff / (sd / std::sqrt(static_cast<double>(d.size())));
  boost::math::students_t dist(r.dof);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

} // namespace reason::loss
