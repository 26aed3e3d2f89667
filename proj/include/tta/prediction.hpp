#pragma once

#include <cstdint>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

/// Per-voxel class probabilities, shape (batch, C, D, H, W).
struct SoftPrediction {
  Tensor probabilities;

  std::size_t num_classes() const { return probabilities.extent(1); }
  std::size_t batch() const { return probabilities.extent(0); }
  Spatial spatial() const { return spatial_of(probabilities); }

  /// Checks shape, range [0,1] and per-voxel normalization within `tol`.
  void validate(double tol = 1e-5) const;

  /// Hard labels (argmax over classes) for one batch element, width fastest.
  std::vector<std::uint8_t> argmax(std::size_t batch_index) const;

  /// The probability field of one batch element as a (1, C, D, H, W) prediction.
  SoftPrediction sample(std::size_t batch_index) const;
};

}  // namespace tta
