#include "tta/harness/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tta/error.hpp"
#include "tta/rng.hpp"

namespace tta::harness {

GradCheckReport check_gradients(Network net, const Tensor& x, BnMode mode, const LossFunction& loss,
                                const std::vector<std::string>& parameters, const GradCheckOptions& opt) {
  if (!loss) throw ConfigError("gradient check needs a loss function");
  if (opt.epsilons.empty()) throw ConfigError("gradient check needs at least one step size");
  const Objective base = loss(net.forward(x, mode));
  const Gradients grads = net.backward(base.grad);

  auto evaluate = [&] { return loss(net.forward(x, mode)).value.total; };

  GradCheckReport report;
  Rng rng(opt.seed);
  for (const std::string& name : parameters) {
    Tensor& p = net.parameter(name);
    const Tensor& g = grads.params.at(name);
    for (std::size_t k = 0; k < opt.per_parameter; ++k) {
      const std::size_t i = rng.below(p.size());
      const float original = p[i];
      GradCheckEntry e;
      e.parameter = name;
      e.index = i;
      e.analytic = g[i];
      e.rel_error = std::numeric_limits<double>::infinity();
      for (double eps : opt.epsilons) {
        p[i] = static_cast<float>(original + eps);
        const double plus = evaluate();
        p[i] = static_cast<float>(original - eps);
        const double minus = evaluate();
        p[i] = original;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double rel =
            std::abs(e.analytic - numeric) / std::max({std::abs(e.analytic), std::abs(numeric), opt.floor});
        if (rel < e.rel_error) {
          e.rel_error = rel;
          e.numeric = numeric;
        }
      }
      report.worst_rel_error = std::max(report.worst_rel_error, e.rel_error);
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

std::vector<std::string> batch_invariant_parameters(const Network& net) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 1 < net.num_layers(); ++i) {
    if (net.layer(i).kind == LayerKind::Conv3d && net.layer(i + 1).kind == LayerKind::BatchNorm) {
      out.push_back(net.layer(i).name + ".bias");
    }
  }
  return out;
}

}  // namespace tta::harness
