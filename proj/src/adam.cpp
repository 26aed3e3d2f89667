#include "tta/adam.hpp"

#include <cmath>

#include "tta/error.hpp"

namespace tta {

ParameterMask ParameterMask::batch_norm(const Network& net) {
  return layers(net, net.batch_norm_layers());
}

ParameterMask ParameterMask::layers(const Network& net, const std::vector<std::size_t>& layer_indices) {
  std::set<std::string> names;
  for (std::size_t i : layer_indices) {
    const Layer& l = net.layer(i);
    for (const auto& p : l.params) names.insert(l.name + "." + p.name);
  }
  return ParameterMask(std::move(names));
}

ParameterMask ParameterMask::all(const Network& net) {
  const auto names = net.parameter_names();
  return ParameterMask(std::set<std::string>(names.begin(), names.end()));
}

void adam_step(Network& net, const Gradients& grads, const ParameterMask& mask, AdamState& state, double lr,
               const AdamHyperparameters& hp) {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  // Validate everything before touching any parameter.
  for (const std::string& name : mask.names()) {
    const auto it = grads.params.find(name);
    if (it == grads.params.end()) throw ConfigError("no gradient for masked parameter '" + name + "'");
    const Tensor& p = net.parameter(name);
    if (it->second.size() != p.size()) {
      throw ShapeError("gradient for '" + name + "' has " + std::to_string(it->second.size()) +
                       " entries, parameter has " + std::to_string(p.size()));
    }
    const auto st = state.moments_.find(name);
    if (st != state.moments_.end() && st->second.m.size() != p.size()) {
      throw ShapeError("optimizer state for '" + name + "' does not match the parameter size");
    }
  }

  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  const float b1 = static_cast<float>(hp.beta1);
  const float b2 = static_cast<float>(hp.beta2);

  for (const std::string& name : mask.names()) {
    Tensor& p = net.parameter(name);
    const Tensor& g = grads.params.at(name);
    AdamState::Moments& mom = state.moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0f);
      mom.v.assign(p.size(), 0.0f);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = g[i];
      mom.m[i] = b1 * mom.m[i] + (1.0f - b1) * gi;
      mom.v[i] = b2 * mom.v[i] + (1.0f - b2) * gi * gi;
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      p[i] = static_cast<float>(p[i] - lr * m_hat / (std::sqrt(v_hat) + hp.epsilon));
    }
    if (!p.all_finite()) throw NumericError("parameter '" + name + "' became non-finite");
  }
}

}  // namespace tta
