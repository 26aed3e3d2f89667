#include "tta/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tta/error.hpp"
#include "tta/rng.hpp"
#include "tta/shift.hpp"

namespace tta {
namespace {

struct StructureTemplate {
  std::array<double, 3> center;     // normalized (d, h, w) in [-1, 1]
  std::array<double, 3> semi_axes;  // at size factor 1
  std::array<double, 3> drift;      // centre displacement per unit g
  double bend;                      // curvature of the h coordinate along w
};

// Index k-1 describes class k.
constexpr std::array<StructureTemplate, kPhantomStructures> kTemplates{{
    {{0.45, 0.40, -0.45}, {0.34, 0.24, 0.36}, {0.04, 0.02, -0.03}, 0.4},
    {{-0.45, 0.40, 0.45}, {0.34, 0.24, 0.36}, {-0.04, 0.02, 0.03}, 0.4},
    {{0.00, -0.45, 0.00}, {0.48, 0.28, 0.55}, {0.00, -0.05, 0.00}, 0.3},
    {{-0.45, 0.40, -0.45}, {0.26, 0.18, 0.24}, {-0.02, 0.02, -0.02}, 0.0},
}};

constexpr std::array<double, kPhantomClasses> kBaseLevels{0.10, 0.95, 0.30, 0.70, 0.50};
constexpr std::array<double, 3> kSpeckleSigma{0.8, 0.8, 1.6};
constexpr double kJitterPosition = 0.03;
constexpr double kJitterSize = 0.08;

double size_factor(double g) { return 0.8 + 0.4 * g; }

struct Placed {
  std::array<double, 3> center;
  std::array<double, 3> semi;
  double bend;
  double rotation;  // in-plane (h, w) angle, radians
};

bool inside(const Placed& s, double d, double h, double w) {
  const double od = d - s.center[0];
  double oh = h - s.center[1];
  double ow = w - s.center[2];
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  const double rh = c * oh - sn * ow;
  const double rw = sn * oh + c * ow;
  const double bent_h = rh - s.bend * rw * rw;
  const double q = (od * od) / (s.semi[0] * s.semi[0]) + (bent_h * bent_h) / (s.semi[1] * s.semi[1]) +
                   (rw * rw) / (s.semi[2] * s.semi[2]);
  return q <= 1.0;
}

// Conservative bounding box of a placed structure, tested against [-1, 1]^3.
bool within_field(const Placed& s) {
  const double a_w = s.semi[2];
  const double rh_lo = -s.semi[1] + std::min(0.0, s.bend) * a_w * a_w;
  const double rh_hi = s.semi[1] + std::max(0.0, s.bend) * a_w * a_w;
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  // oh = c*rh + sn*rw, ow = -sn*rh + c*rw with rw in [-a_w, a_w].
  const double oh_lo = std::min(c * rh_lo, c * rh_hi) - std::abs(sn) * a_w;
  const double oh_hi = std::max(c * rh_lo, c * rh_hi) + std::abs(sn) * a_w;
  const double ow_ext = std::max(std::abs(sn * rh_lo), std::abs(sn * rh_hi)) + std::abs(c) * a_w;
  return std::abs(s.center[0]) + s.semi[0] < 1.0 && s.center[1] + oh_lo > -1.0 && s.center[1] + oh_hi < 1.0 &&
         std::abs(s.center[2]) + ow_ext < 1.0;
}

double norm_coord(std::size_t i, std::size_t n) {
  return (static_cast<double>(i) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
}

}  // namespace

void PhantomSpec::validate() const {
  for (std::size_t e : {dims.d, dims.h, dims.w}) {
    if (e < 4 || e % 2 != 0) throw ConfigError("phantom extents must be even and >= 4");
  }
  if (num_structures != kPhantomStructures) {
    throw ConfigError("phantoms have exactly " + std::to_string(kPhantomStructures) + " structures");
  }
  if (!(growth >= 0.0 && growth <= 1.0)) throw ConfigError("growth must lie in [0, 1]");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be finite and >= 0");
  if (!(bias >= 0.0 && bias < 1.0)) throw ConfigError("bias must lie in [0, 1)");
  if (!(voxel_size_mm > 0.0f) || !std::isfinite(voxel_size_mm)) throw ConfigError("voxel size must be positive");
}

double phantom_class_level(std::size_t k, double growth) {
  if (k >= kPhantomClasses) throw ConfigError("class index out of range");
  const double bg = kBaseLevels[0];
  return bg + (kBaseLevels[k] - bg) * (0.85 + 0.3 * growth);
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Dims& dm = spec.dims;
  const double g = spec.growth;

  // Jitter is drawn from its own stream so it does not depend on g.
  Rng jitter(derive_seed(spec.seed, 1));
  std::array<Placed, kPhantomStructures> placed{};
  for (std::size_t s = 0; s < kPhantomStructures; ++s) {
    const StructureTemplate& t = kTemplates[s];
    Placed& p = placed[s];
    const double size_jitter = 1.0 + jitter.uniform(-kJitterSize, kJitterSize);
    for (int a = 0; a < 3; ++a) {
      p.center[a] = t.center[a] + t.drift[a] * g + jitter.uniform(-kJitterPosition, kJitterPosition);
      p.semi[a] = t.semi_axes[a] * size_factor(g) * size_jitter;
    }
    p.bend = t.bend;
    p.rotation = jitter.uniform(-0.05, 0.05);
  }

  for (std::size_t s = 0; s < kPhantomStructures; ++s) {
    if (!within_field(placed[s])) {
      throw ConfigError("phantom structure " + std::to_string(s + 1) + " extends beyond the field");
    }
  }

  Phantom out{Volume(dm, spec.voxel_size_mm), LabelMap(dm, spec.voxel_size_mm, 0)};
  std::array<std::size_t, kPhantomStructures> counts{};
  for (std::size_t d = 0; d < dm.d; ++d) {
    const double ud = norm_coord(d, dm.d);
    for (std::size_t h = 0; h < dm.h; ++h) {
      const double uh = norm_coord(h, dm.h);
      for (std::size_t w = 0; w < dm.w; ++w) {
        const double uw = norm_coord(w, dm.w);
        std::uint8_t label = 0;
        for (std::size_t s = 0; s < kPhantomStructures; ++s) {
          if (!inside(placed[s], ud, uh, uw)) continue;
          if (label != 0) throw Error("phantom structures overlap (seed " + std::to_string(spec.seed) + ")");
          label = static_cast<std::uint8_t>(s + 1);
          ++counts[s];
        }
        out.labels.at(d, h, w) = label;
      }
    }
  }
  for (std::size_t s = 0; s < kPhantomStructures; ++s) {
    if (counts[s] == 0) {
      throw ConfigError("phantom structure " + std::to_string(s + 1) + " does not fit at grid " +
                        std::to_string(dm.d) + "x" + std::to_string(dm.h) + "x" + std::to_string(dm.w));
    }
  }

  std::array<double, kPhantomClasses> levels{};
  for (std::size_t k = 0; k < kPhantomClasses; ++k) levels[k] = phantom_class_level(k, g);

  // Speckle: uniform field, anisotropically blurred, standardized.
  Volume speckle(dm, spec.voxel_size_mm, 0.0f);
  if (spec.noise > 0.0) {
    Rng noise(derive_seed(spec.seed, 2));
    for (float& v : speckle.values) v = static_cast<float>(noise.uniform(-1.0, 1.0));
    speckle = gaussian_smooth(speckle, kSpeckleSigma);
    double mean = 0.0, sq = 0.0;
    for (float v : speckle.values) mean += v;
    mean /= static_cast<double>(speckle.size());
    for (float v : speckle.values) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(speckle.size()));
    for (float& v : speckle.values) v = static_cast<float>(sd > 0.0 ? (v - mean) / sd : 0.0);
  }

  // Smooth bias field: first and second order terms with random coefficients.
  std::array<double, 6> coef{};
  if (spec.bias > 0.0) {
    Rng b(derive_seed(spec.seed, 3));
    for (double& c : coef) c = b.uniform(-1.0, 1.0);
  }
  const double coef_norm = [&] {
    double s = 0.0;
    for (double c : coef) s += std::abs(c);
    return s > 0.0 ? s : 1.0;
  }();

  for (std::size_t d = 0; d < dm.d; ++d) {
    const double ud = norm_coord(d, dm.d);
    for (std::size_t h = 0; h < dm.h; ++h) {
      const double uh = norm_coord(h, dm.h);
      for (std::size_t w = 0; w < dm.w; ++w) {
        const double uw = norm_coord(w, dm.w);
        const std::size_t i = out.volume.index(d, h, w);
        double v = levels[out.labels.values[i]];
        if (spec.bias > 0.0) {
          const double field = coef[0] * ud + coef[1] * uh + coef[2] * uw + coef[3] * ud * uh + coef[4] * uh * uw +
                               coef[5] * ud * uw;
          v *= 1.0 + spec.bias * field / coef_norm;
        }
        if (spec.noise > 0.0) v *= 1.0 + spec.noise * speckle.values[i];
        out.volume.values[i] = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::size_t growth_bin_of(double growth, std::size_t n_bins) {
  if (n_bins == 0) throw ConfigError("growth bin count must be positive");
  if (!(growth >= 0.0 && growth <= 1.0)) throw ConfigError("growth must lie in [0, 1]");
  return std::min(static_cast<std::size_t>(growth * static_cast<double>(n_bins)), n_bins - 1);
}

double growth_to_week(double growth) { return 18.0 + 8.0 * growth; }

LabelMap Atlas::argmax_labels() const {
  if (frequency.empty()) return {};
  LabelMap out(frequency[0].dims, frequency[0].voxel_size_mm, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < num_classes; ++k) {
      if (frequency[k].values[i] > frequency[best].values[i]) best = k;
    }
    out.values[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Atlas build_atlas(std::span<const AtlasEntry> cohort, std::size_t growth_bins, std::size_t num_classes) {
  if (cohort.empty()) throw ConfigError("atlas cohort is empty");
  if (growth_bins == 0) throw ConfigError("growth bin count must be positive");
  if (num_classes < 2 || num_classes > 256) throw ConfigError("atlas needs 2..256 classes");
  const Dims dims = cohort[0].volume->dims;
  for (const AtlasEntry& e : cohort) {
    if (e.volume == nullptr || e.labels == nullptr) throw ConfigError("atlas entry without data");
    if (e.volume->dims != dims || e.labels->dims != dims) throw ShapeError("atlas cohort members differ in shape");
  }
  const std::size_t n_vox = dims.count();
  const std::size_t n = cohort.size();
  const float voxel_mm = cohort[0].volume->voxel_size_mm;

  Atlas atlas;
  atlas.num_classes = num_classes;
  atlas.growth_bins = growth_bins;
  atlas.mean_intensity = Volume(dims, voxel_mm);

  // Sorting per voxel before summation makes the mean independent of cohort order.
  std::vector<float> column(n);
  for (std::size_t i = 0; i < n_vox; ++i) {
    for (std::size_t j = 0; j < n; ++j) column[j] = cohort[j].volume->values[i];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (float v : column) s += v;
    atlas.mean_intensity.values[i] = static_cast<float>(s / static_cast<double>(n));
  }

  std::vector<std::size_t> bin_of(n);
  atlas.bin_counts.assign(growth_bins, 0);
  for (std::size_t j = 0; j < n; ++j) {
    bin_of[j] = growth_bin_of(cohort[j].growth, growth_bins);
    ++atlas.bin_counts[bin_of[j]];
  }

  std::vector<std::uint32_t> all_counts(n_vox * num_classes, 0);
  std::vector<std::uint32_t> bin_counts(n_vox * num_classes * growth_bins, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& labels = cohort[j].labels->values;
    for (std::size_t i = 0; i < n_vox; ++i) {
      const std::size_t k = labels[i];
      if (k >= num_classes) throw ConfigError("label " + std::to_string(k) + " outside the class range");
      ++all_counts[i * num_classes + k];
      ++bin_counts[(bin_of[j] * n_vox + i) * num_classes + k];
    }
  }

  atlas.frequency.assign(num_classes, Volume(dims, voxel_mm));
  for (std::size_t i = 0; i < n_vox; ++i) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      atlas.frequency[k].values[i] =
          static_cast<float>(static_cast<double>(all_counts[i * num_classes + k]) / static_cast<double>(n));
    }
  }

  atlas.class_ratios.assign(growth_bins, {});
  for (std::size_t b = 0; b < growth_bins; ++b) {
    if (atlas.bin_counts[b] == 0) continue;
    std::vector<std::size_t> hist(num_classes, 0);
    for (std::size_t i = 0; i < n_vox; ++i) {
      const std::uint32_t* c = &bin_counts[(b * n_vox + i) * num_classes];
      std::size_t best = 0;
      for (std::size_t k = 1; k < num_classes; ++k) {
        if (c[k] > c[best]) best = k;
      }
      ++hist[best];
    }
    std::vector<double>& tau = atlas.class_ratios[b];
    tau.resize(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
      tau[k] = static_cast<double>(hist[k]) / static_cast<double>(n_vox);
    }
  }
  return atlas;
}

Atlas build_atlas(std::span<const Phantom> cohort, std::span<const double> growths, std::size_t growth_bins,
                  std::size_t num_classes) {
  if (cohort.size() != growths.size()) throw ConfigError("one growth value per cohort member is required");
  std::vector<AtlasEntry> entries(cohort.size());
  for (std::size_t j = 0; j < cohort.size(); ++j) entries[j] = {&cohort[j].volume, &cohort[j].labels, growths[j]};
  return build_atlas(entries, growth_bins, num_classes);
}

ClassRatioPrior class_ratio_prior(const Atlas& atlas, std::size_t growth_bin) {
  if (growth_bin >= atlas.growth_bins) {
    throw ConfigError("growth bin " + std::to_string(growth_bin) + " out of range (" +
                      std::to_string(atlas.growth_bins) + " bins)");
  }
  if (atlas.class_ratios[growth_bin].empty()) {
    throw StateError("growth bin " + std::to_string(growth_bin) + " has no cohort members");
  }
  return ClassRatioPrior::floored(atlas.class_ratios[growth_bin]);
}

}  // namespace tta
