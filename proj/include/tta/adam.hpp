#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tta/network.hpp"

namespace tta {

/// Qualified names of the parameters an optimizer step may touch.
class ParameterMask {
 public:
  ParameterMask() = default;
  explicit ParameterMask(std::set<std::string> names) : names_(std::move(names)) {}

  /// Scale and shift of every BatchNorm layer.
  static ParameterMask batch_norm(const Network& net);
  /// Every parameter of the given layers (network layer indices).
  static ParameterMask layers(const Network& net, const std::vector<std::size_t>& layer_indices);
  static ParameterMask all(const Network& net);

  bool contains(const std::string& name) const { return names_.count(name) != 0; }
  const std::set<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }

  friend bool operator==(const ParameterMask&, const ParameterMask&) = default;

 private:
  std::set<std::string> names_;
};

struct AdamHyperparameters {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };

  std::int64_t step() const { return step_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  friend void adam_step(Network&, const Gradients&, const ParameterMask&, AdamState&, double,
                        const AdamHyperparameters&);
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

/// One bias-corrected Adam update of the masked parameters. Parameters
/// outside the mask are never written.
void adam_step(Network& net, const Gradients& grads, const ParameterMask& mask, AdamState& state, double lr,
               const AdamHyperparameters& hp = {});

}  // namespace tta
