#pragma once

#include <cstdint>
#include <vector>

namespace tta::harness {

struct ToyImportanceCheck {
  std::vector<double> library;  ///< taylor_importance on the toy network
  std::vector<double> manual;   ///< closed-form evaluation of the same quantity
  double max_abs_error = 0.0;
};

/// Two 1x1x1 convolutions followed by softmax, with seeded weights, on a
/// seeded 2-sample batch. The manual side propagates the entropy gradient
/// through the two linear maps by hand.
ToyImportanceCheck toy_importance_check(std::uint64_t seed);

/// Number of random importance pairs (out of `trials`) on which
/// select_layers disagrees with a brute-force oracle that ranks layers by
/// explicit pairwise comparison.
std::size_t select_layers_mismatches(std::size_t trials, std::uint64_t seed);

}  // namespace tta::harness
