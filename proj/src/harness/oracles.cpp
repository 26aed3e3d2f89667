#include "tta/harness/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "tta/adaptation.hpp"
#include "tta/network.hpp"
#include "tta/rng.hpp"

namespace tta::harness {

ToyImportanceCheck toy_importance_check(std::uint64_t seed) {
  constexpr std::size_t kIn = 1, kHidden = 2, kClasses = 3, kSamples = 2, kVoxels = 8;
  Rng rng(seed);
  std::vector<Layer> layers{Layer::conv3d("c1", kIn, kHidden, 1), Layer::conv3d("c2", kHidden, kClasses, 1),
                            Layer::softmax("softmax")};
  double w1[kHidden], b1[kHidden], w2[kClasses][kHidden], b2[kClasses];
  for (std::size_t k = 0; k < kHidden; ++k) {
    w1[k] = static_cast<float>(rng.uniform(-1.5, 1.5));
    b1[k] = static_cast<float>(rng.uniform(-0.5, 0.5));
    layers[0].param("weight")[k] = static_cast<float>(w1[k]);
    layers[0].param("bias")[k] = static_cast<float>(b1[k]);
  }
  for (std::size_t c = 0; c < kClasses; ++c) {
    for (std::size_t k = 0; k < kHidden; ++k) {
      w2[c][k] = static_cast<float>(rng.uniform(-1.5, 1.5));
      layers[1].param("weight")[c * kHidden + k] = static_cast<float>(w2[c][k]);
    }
    b2[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
    layers[1].param("bias")[c] = static_cast<float>(b2[c]);
  }
  const Network net(std::move(layers));

  Tensor x({kSamples, 1, 2, 2, 2});
  for (float& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  ToyImportanceCheck out;
  out.library = taylor_importance(net, x).values;

  // Per-filter sums of dL_n/dz * z over voxels, accumulated over samples.
  double s1[kHidden] = {}, s2[kClasses] = {};
  for (std::size_t n = 0; n < kSamples; ++n) {
    for (std::size_t v = 0; v < kVoxels; ++v) {
      const double xv = x[n * kVoxels + v];
      double z1[kHidden], z2[kClasses], p[kClasses];
      for (std::size_t k = 0; k < kHidden; ++k) z1[k] = w1[k] * xv + b1[k];
      double zmax = -1e300;
      for (std::size_t c = 0; c < kClasses; ++c) {
        z2[c] = b2[c];
        for (std::size_t k = 0; k < kHidden; ++k) z2[c] += w2[c][k] * z1[k];
        zmax = std::max(zmax, z2[c]);
      }
      double denom = 0.0;
      for (std::size_t c = 0; c < kClasses; ++c) denom += std::exp(z2[c] - zmax);
      double h = 0.0;
      for (std::size_t c = 0; c < kClasses; ++c) {
        p[c] = std::exp(z2[c] - zmax) / denom;
        h -= p[c] * std::log(p[c]);
      }
      // d(mean entropy)/dz2_c = -(1/V) p_c (log p_c + H)
      double g2[kClasses];
      for (std::size_t c = 0; c < kClasses; ++c) {
        g2[c] = -p[c] * (std::log(p[c]) + h) / static_cast<double>(kVoxels);
        s2[c] += g2[c] * z2[c];
      }
      for (std::size_t k = 0; k < kHidden; ++k) {
        double g1 = 0.0;
        for (std::size_t c = 0; c < kClasses; ++c) g1 += w2[c][k] * g2[c];
        s1[k] += g1 * z1[k];
      }
    }
  }
  double theta1 = 0.0, theta2 = 0.0;
  for (double s : s1) theta1 += std::abs(s / kSamples);
  for (double s : s2) theta2 += std::abs(s / kSamples);
  const double norm = std::hypot(theta1, theta2);
  out.manual = {theta1 / norm, theta2 / norm};

  out.max_abs_error = out.library.size() == out.manual.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(out.library.size(), out.manual.size()); ++i) {
    out.max_abs_error = std::max(out.max_abs_error, std::abs(out.library[i] - out.manual[i]));
  }
  return out;
}

std::size_t select_layers_mismatches(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 2 + rng.below(12);
    const std::size_t m = 1 + rng.below(n);
    // Coarse values on every other trial so that ties occur.
    const bool coarse = t % 2 == 0;
    ImportanceVector s, g;
    for (std::size_t i = 0; i < n; ++i) {
      s.values.push_back(coarse ? static_cast<double>(rng.below(4)) / 4.0 : rng.uniform());
      g.values.push_back(coarse ? static_cast<double>(rng.below(4)) / 4.0 : rng.uniform());
    }
    std::vector<std::size_t> expected(m);
    for (std::size_t i = 0; i < n; ++i) {
      const double di = std::abs(s.values[i] - g.values[i]);
      std::size_t rank = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double dj = std::abs(s.values[j] - g.values[j]);
        if (dj > di || (dj == di && j < i)) ++rank;
      }
      if (rank < m) expected[rank] = i;
    }
    if (select_layers(s, g, m) != expected) ++mismatches;
  }
  return mismatches;
}

}  // namespace tta::harness
