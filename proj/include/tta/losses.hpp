#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tta/prediction.hpp"
#include "tta/tensor.hpp"

namespace tta {

inline constexpr double kProbabilityClamp = 1e-12;
inline constexpr double kPriorFloor = 1e-6;

/// Per-class proportion vector, every entry >= kPriorFloor, summing to 1.
class ClassRatioPrior {
 public:
  ClassRatioPrior() = default;
  /// Validates an already-normalized vector.
  explicit ClassRatioPrior(std::vector<double> tau);

  /// Floors entries at kPriorFloor and rescales the remaining mass so the
  /// vector sums to 1 with floored entries left exactly at the floor.
  static ClassRatioPrior floored(std::span<const double> proportions);

  const std::vector<double>& tau() const { return tau_; }
  std::size_t size() const { return tau_.size(); }
  double operator[](std::size_t k) const { return tau_[k]; }

 private:
  std::vector<double> tau_;
};

struct LossValue {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;

  double component(const std::string& name) const;
};

/// A loss value together with its gradient with respect to the probabilities.
struct Objective {
  LossValue value;
  Tensor grad;
};

/// Mean over voxels of -sum_c p_c log p_c, natural log, p clamped at 1e-12.
LossValue shannon_entropy(const SoftPrediction& pred);
Objective shannon_entropy_objective(const SoftPrediction& pred);

/// tau_hat(k): mean of p_k over every voxel of every batch element.
std::vector<double> predicted_class_ratio(const SoftPrediction& pred);

/// sum_k tau_hat(k) log(tau_hat(k) / tau(k)), tau_hat clamped inside the log.
double kl_divergence(std::span<const double> tau_hat, const ClassRatioPrior& tau);
/// d KL / d tau_hat.
std::vector<double> kl_divergence_grad(std::span<const double> tau_hat, const ClassRatioPrior& tau);

/// Entropy + lambda * KL(tau_hat || tau). Components "entropy" and "kl".
LossValue entropy_kl_loss(const SoftPrediction& pred, const ClassRatioPrior& tau, double lambda);
Objective entropy_kl_objective(const SoftPrediction& pred, const ClassRatioPrior& tau, double lambda);

/// Mean over voxels of -log p_truth (clamped). `labels` holds batch * D*H*W
/// entries, batch-major. With `class_weights` (one per class) the mean is
/// weighted by the weight of each voxel's true class.
LossValue cross_entropy(const SoftPrediction& pred, std::span<const std::uint8_t> labels,
                        std::span<const double> class_weights = {});
Objective cross_entropy_objective(const SoftPrediction& pred, std::span<const std::uint8_t> labels,
                                  std::span<const double> class_weights = {});

/// 2|A n B| / (|A| + |B|) for one class; 1.0 when both masks are empty.
double dice_score(std::span<const std::uint8_t> pred_labels, std::span<const std::uint8_t> truth,
                  std::uint8_t class_id);
/// Per-class Dice for classes 1..num_classes-1 (background excluded).
std::vector<double> foreground_dice(std::span<const std::uint8_t> pred_labels, std::span<const std::uint8_t> truth,
                                    std::size_t num_classes);
double mean_dice(std::span<const std::uint8_t> pred_labels, std::span<const std::uint8_t> truth,
                 std::size_t num_classes);

}  // namespace tta
