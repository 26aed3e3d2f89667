#include "tta/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tta/error.hpp"

namespace tta {
namespace {

void require_classes(const SoftPrediction& pred) {
  if (pred.probabilities.rank() != 5) {
    throw ShapeError("prediction must be 5-D, got " + shape_to_string(pred.probabilities.shape()));
  }
  if (pred.num_classes() < 2) {
    throw ConfigError("entropy needs at least 2 classes, got " + std::to_string(pred.num_classes()));
  }
}

double clamped_log(double p) { return std::log(std::max(p, kProbabilityClamp)); }

struct Layout {
  std::size_t batch, classes, vol;
  double voxels() const { return static_cast<double>(batch * vol); }
};

Layout layout_of(const SoftPrediction& pred) {
  return {pred.batch(), pred.num_classes(), pred.spatial().count()};
}

}  // namespace

ClassRatioPrior::ClassRatioPrior(std::vector<double> tau) : tau_(std::move(tau)) {
  if (tau_.size() < 2) throw ConfigError("class ratio prior needs at least 2 classes");
  double sum = 0.0;
  for (double t : tau_) {
    if (!(t >= kPriorFloor * (1.0 - 1e-9) && t <= 1.0)) {
      throw ConfigError("class ratio prior entry " + std::to_string(t) + " is outside [1e-6, 1]");
    }
    sum += t;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("class ratio prior sums to " + std::to_string(sum));
}

ClassRatioPrior ClassRatioPrior::floored(std::span<const double> proportions) {
  if (proportions.size() < 2) throw ConfigError("class ratio prior needs at least 2 classes");
  std::vector<double> p(proportions.begin(), proportions.end());
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("class proportions must be finite and nonnegative");
  }
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (!(total > 0.0)) throw ConfigError("class proportions sum to zero");
  for (double& v : p) v /= total;

  // Pin entries below the floor, then spread the remaining mass over the
  // free entries; repeat until no free entry drops below the floor.
  std::vector<bool> pinned(p.size(), false);
  for (;;) {
    double free_mass = 0.0;
    std::size_t n_pinned = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (pinned[k]) {
        ++n_pinned;
      } else {
        free_mass += p[k];
      }
    }
    const double target = 1.0 - kPriorFloor * static_cast<double>(n_pinned);
    bool changed = false;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (pinned[k]) {
        p[k] = kPriorFloor;
        continue;
      }
      p[k] = free_mass > 0.0 ? p[k] * target / free_mass : kPriorFloor;
      if (p[k] < kPriorFloor) {
        pinned[k] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return ClassRatioPrior(std::move(p));
}

double LossValue::component(const std::string& name) const {
  for (const auto& [n, v] : components) {
    if (n == name) return v;
  }
  throw ConfigError("loss has no component '" + name + "'");
}

LossValue shannon_entropy(const SoftPrediction& pred) {
  require_classes(pred);
  const Layout s = layout_of(pred);
  const float* p = pred.probabilities.data();
  double sum = 0.0;
  for (std::size_t n = 0; n < s.batch; ++n) {
    const float* pn = p + n * s.classes * s.vol;
    for (std::size_t v = 0; v < s.vol; ++v) {
      double h = 0.0;
      for (std::size_t c = 0; c < s.classes; ++c) {
        const double q = pn[c * s.vol + v];
        h -= q * clamped_log(q);
      }
      sum += h;
    }
  }
  const double mean = sum / s.voxels();
  return LossValue{mean, {{"entropy", mean}}};
}

Objective shannon_entropy_objective(const SoftPrediction& pred) {
  Objective obj{shannon_entropy(pred), Tensor(pred.probabilities.shape())};
  const Layout s = layout_of(pred);
  const double inv = 1.0 / s.voxels();
  const float* p = pred.probabilities.data();
  float* g = obj.grad.data();
  for (std::size_t i = 0; i < pred.probabilities.size(); ++i) {
    g[i] = static_cast<float>(-(clamped_log(p[i]) + 1.0) * inv);
  }
  return obj;
}

std::vector<double> predicted_class_ratio(const SoftPrediction& pred) {
  require_classes(pred);
  const Layout s = layout_of(pred);
  std::vector<double> tau_hat(s.classes, 0.0);
  const float* p = pred.probabilities.data();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t c = 0; c < s.classes; ++c) {
      const float* pc = p + (n * s.classes + c) * s.vol;
      double sum = 0.0;
      for (std::size_t v = 0; v < s.vol; ++v) sum += pc[v];
      tau_hat[c] += sum;
    }
  }
  for (double& t : tau_hat) t /= s.voxels();
  return tau_hat;
}

double kl_divergence(std::span<const double> tau_hat, const ClassRatioPrior& tau) {
  if (tau_hat.size() != tau.size()) {
    throw ShapeError("KL divergence: tau_hat has " + std::to_string(tau_hat.size()) + " classes, prior has " +
                     std::to_string(tau.size()));
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < tau.size(); ++k) kl += tau_hat[k] * (clamped_log(tau_hat[k]) - std::log(tau[k]));
  // Rounding can leave a tiny negative value at tau_hat == tau.
  return std::max(kl, 0.0);
}

std::vector<double> kl_divergence_grad(std::span<const double> tau_hat, const ClassRatioPrior& tau) {
  if (tau_hat.size() != tau.size()) throw ShapeError("KL divergence: length mismatch");
  std::vector<double> g(tau.size());
  for (std::size_t k = 0; k < tau.size(); ++k) g[k] = clamped_log(tau_hat[k]) - std::log(tau[k]) + 1.0;
  return g;
}

LossValue entropy_kl_loss(const SoftPrediction& pred, const ClassRatioPrior& tau, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative, got " + std::to_string(lambda));
  const LossValue h = shannon_entropy(pred);
  const double kl = kl_divergence(predicted_class_ratio(pred), tau);
  return LossValue{h.total + lambda * kl, {{"entropy", h.total}, {"kl", kl}}};
}

Objective entropy_kl_objective(const SoftPrediction& pred, const ClassRatioPrior& tau, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative, got " + std::to_string(lambda));
  Objective obj = shannon_entropy_objective(pred);
  const std::vector<double> tau_hat = predicted_class_ratio(pred);
  const double kl = kl_divergence(tau_hat, tau);
  obj.value = LossValue{obj.value.total + lambda * kl, {{"entropy", obj.value.total}, {"kl", kl}}};
  if (lambda > 0.0) {
    const Layout s = layout_of(pred);
    const std::vector<double> dkl = kl_divergence_grad(tau_hat, tau);
    for (std::size_t n = 0; n < s.batch; ++n) {
      for (std::size_t c = 0; c < s.classes; ++c) {
        const float add = static_cast<float>(lambda * dkl[c] / s.voxels());
        float* g = obj.grad.data() + (n * s.classes + c) * s.vol;
        for (std::size_t v = 0; v < s.vol; ++v) g[v] += add;
      }
    }
  }
  return obj;
}

namespace {

double class_weight(std::span<const double> w, std::uint8_t y) { return w.empty() ? 1.0 : w[y]; }

void check_weights(std::span<const double> w, std::size_t classes) {
  if (w.empty()) return;
  if (w.size() != classes) throw ShapeError("cross entropy: class weight count does not match class count");
  for (double x : w) {
    if (!std::isfinite(x) || x <= 0.0) throw ConfigError("cross entropy: class weights must be positive");
  }
}

}  // namespace

LossValue cross_entropy(const SoftPrediction& pred, std::span<const std::uint8_t> labels,
                        std::span<const double> class_weights) {
  require_classes(pred);
  const Layout s = layout_of(pred);
  if (labels.size() != s.batch * s.vol) throw ShapeError("cross entropy: label count does not match prediction");
  check_weights(class_weights, s.classes);
  const float* p = pred.probabilities.data();
  double sum = 0.0, total_weight = 0.0;
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t v = 0; v < s.vol; ++v) {
      const std::uint8_t y = labels[n * s.vol + v];
      if (y >= s.classes) throw ConfigError("label " + std::to_string(y) + " exceeds class count");
      const double w = class_weight(class_weights, y);
      sum -= w * clamped_log(p[(n * s.classes + y) * s.vol + v]);
      total_weight += w;
    }
  }
  const double mean = sum / total_weight;
  return LossValue{mean, {{"cross_entropy", mean}}};
}

Objective cross_entropy_objective(const SoftPrediction& pred, std::span<const std::uint8_t> labels,
                                  std::span<const double> class_weights) {
  Objective obj{cross_entropy(pred, labels, class_weights), Tensor(pred.probabilities.shape())};
  const Layout s = layout_of(pred);
  double total_weight = 0.0;
  for (std::uint8_t y : labels) total_weight += class_weight(class_weights, y);
  const float* p = pred.probabilities.data();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t v = 0; v < s.vol; ++v) {
      const std::uint8_t y = labels[n * s.vol + v];
      const std::size_t i = (n * s.classes + y) * s.vol + v;
      obj.grad[i] = static_cast<float>(-class_weight(class_weights, y) / total_weight /
                                       std::max(static_cast<double>(p[i]), kProbabilityClamp));
    }
  }
  return obj;
}

double dice_score(std::span<const std::uint8_t> pred_labels, std::span<const std::uint8_t> truth,
                  std::uint8_t class_id) {
  if (pred_labels.size() != truth.size()) {
    throw ShapeError("dice: label maps have " + std::to_string(pred_labels.size()) + " and " +
                     std::to_string(truth.size()) + " voxels");
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool in_a = pred_labels[i] == class_id;
    const bool in_b = truth[i] == class_id;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<double> foreground_dice(std::span<const std::uint8_t> pred_labels, std::span<const std::uint8_t> truth,
                                    std::size_t num_classes) {
  if (num_classes < 2 || num_classes > 256) throw ConfigError("dice: class count out of range");
  std::vector<double> out;
  for (std::size_t c = 1; c < num_classes; ++c) {
    out.push_back(dice_score(pred_labels, truth, static_cast<std::uint8_t>(c)));
  }
  return out;
}

double mean_dice(std::span<const std::uint8_t> pred_labels, std::span<const std::uint8_t> truth,
                 std::size_t num_classes) {
  const std::vector<double> d = foreground_dice(pred_labels, truth, num_classes);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

}  // namespace tta
