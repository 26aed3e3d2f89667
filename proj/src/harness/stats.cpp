#include "tta/harness/stats.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <algorithm>
#include <cmath>
#include <limits>

#include "tta/error.hpp"

namespace tta::harness {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double mu = mean(x);
  double sq = 0.0;
  for (double v : x) sq += (v - mu) * (v - mu);
  return std::sqrt(sq / static_cast<double>(x.size() - 1));
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("paired t-test needs samples of equal length");
  if (a.size() < 2) throw ConfigError("paired t-test needs at least two pairs");
  std::vector<double> diff(a.size());
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw NumericError("paired t-test input is not finite");
    diff[i] = b[i] - a[i];
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  PairedTTest r;
  r.n = diff.size();
  r.mean_difference = mean(diff);
  r.sd_difference = sample_sd(diff);
  // Differences that agree up to subtraction round-off count as constant.
  const double round_off = 8.0 * std::numeric_limits<double>::epsilon() * scale;
  if (r.sd_difference <= round_off) {
    r.zero_variance = true;
    r.sd_difference = 0.0;
    if (r.mean_difference == 0.0) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_difference);
      r.p_value = 0.0;
    }
    return r;
  }
  r.t = r.mean_difference / (r.sd_difference / std::sqrt(static_cast<double>(r.n)));
  const boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace tta::harness
