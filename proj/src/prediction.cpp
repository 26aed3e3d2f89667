#include "tta/prediction.hpp"

#include <cmath>

#include "tta/error.hpp"

namespace tta {

void SoftPrediction::validate(double tol) const {
  if (probabilities.rank() != 5) {
    throw ShapeError("prediction must be 5-D (N, C, D, H, W), got " + shape_to_string(probabilities.shape()));
  }
  const std::size_t c_n = num_classes();
  if (c_n < 2) throw ConfigError("prediction needs at least 2 classes, got " + std::to_string(c_n));
  const std::size_t vol = spatial().count();
  for (std::size_t n = 0; n < batch(); ++n) {
    const float* p = probabilities.data() + n * c_n * vol;
    for (std::size_t v = 0; v < vol; ++v) {
      double sum = 0.0;
      for (std::size_t c = 0; c < c_n; ++c) {
        const float q = p[c * vol + v];
        if (!(q >= 0.0f && q <= 1.0f)) throw NumericError("probability outside [0, 1]");
        sum += q;
      }
      if (std::abs(sum - 1.0) > tol) throw NumericError("class probabilities do not sum to 1");
    }
  }
}

std::vector<std::uint8_t> SoftPrediction::argmax(std::size_t batch_index) const {
  const std::size_t c_n = num_classes();
  const std::size_t vol = spatial().count();
  if (batch_index >= batch()) throw ShapeError("batch index out of range");
  const float* p = probabilities.data() + batch_index * c_n * vol;
  std::vector<std::uint8_t> labels(vol, 0);
  for (std::size_t v = 0; v < vol; ++v) {
    float best = p[v];
    std::uint8_t best_c = 0;
    for (std::size_t c = 1; c < c_n; ++c) {
      if (p[c * vol + v] > best) {
        best = p[c * vol + v];
        best_c = static_cast<std::uint8_t>(c);
      }
    }
    labels[v] = best_c;
  }
  return labels;
}

SoftPrediction SoftPrediction::sample(std::size_t batch_index) const {
  return SoftPrediction{probabilities.batch_slice(batch_index, 1)};
}

}  // namespace tta
