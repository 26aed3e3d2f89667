#pragma once

#include <span>

namespace tta::harness {

struct PairedTTest {
  std::size_t n = 0;
  double mean_difference = 0.0;
  double sd_difference = 0.0;
  double t = 0.0;
  double p_value = 1.0;
  /// Set when every difference is identical up to round-off; t is then 0 or
  /// infinite.
  bool zero_variance = false;
  bool significant(double alpha = 0.05) const { return p_value < alpha; }
};

/// Two-sided paired t-test of b - a with n - 1 degrees of freedom.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_sd(std::span<const double> x);

}  // namespace tta::harness
