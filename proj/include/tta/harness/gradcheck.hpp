#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tta/adaptation.hpp"
#include "tta/network.hpp"

namespace tta::harness {

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst_rel_error = 0.0;
  bool passed(double tol) const { return !entries.empty() && worst_rel_error <= tol; }
};

struct GradCheckOptions {
  /// Central-difference steps tried per entry; the closest estimate counts.
  /// A step that straddles a ReLU or max-pool kink gives a wrong difference,
  /// while a wrong analytic gradient disagrees at every step.
  std::vector<double> epsilons{1e-3, 3e-4, 1e-4, 3e-3};
  /// Denominator floor of the relative error, so that two near-zero values
  /// compare by absolute difference. Float32 forward noise puts finite
  /// differences about 2e-5 off, so smaller gradients cannot be resolved.
  double floor = 3e-3;
  /// Entries checked per listed parameter tensor.
  std::size_t per_parameter = 2;
  std::uint64_t seed = 1;
};

/// Compares backward() against central finite differences of `loss` for
/// randomly chosen entries of the listed parameters. The loss is evaluated
/// in double on the float forward pass.
GradCheckReport check_gradients(Network net, const Tensor& x, BnMode mode, const LossFunction& loss,
                                const std::vector<std::string>& parameters, const GradCheckOptions& opt = {});

/// Parameters whose gradient is identically zero under batch statistics: the
/// bias of a convolution that feeds a BatchNorm.
std::vector<std::string> batch_invariant_parameters(const Network& net);

}  // namespace tta::harness
