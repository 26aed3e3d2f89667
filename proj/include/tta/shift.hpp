#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tta/volume.hpp"

namespace tta {

enum class ShiftKind { Rotation, Scaling, GaussianSmooth, GammaCorrection, Compose };

const char* to_string(ShiftKind k);
ShiftKind parse_shift_kind(std::string_view s);

/// A simulated domain shift. Magnitude x is in degrees for rotation, log
/// scale for scaling, voxels of sigma for smoothing and log gamma for gamma
/// correction. With `exact` set, x itself is applied (on every axis) instead
/// of being sampled from the kind's range.
struct ShiftSpec {
  ShiftKind kind = ShiftKind::Rotation;
  double magnitude = 0.0;
  bool exact = false;
  std::uint64_t seed = 0;
  std::vector<ShiftSpec> steps;  // Compose only, applied in order
};

struct ShiftedSample {
  Volume volume;
  LabelMap labels;
  /// Concrete sampled values, e.g. {"angle_d", 12.5}.
  std::vector<std::pair<std::string, double>> applied;
};

/// Linear map from output-voxel offsets (relative to the volume centre) to
/// source offsets, row-major 3x3 in (d, h, w) order.
struct Affine3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  bool is_identity() const;
};

/// Inverse mapping for intrinsic rotations about the depth, height and width
/// axes, applied in that order.
Affine3 rotation_inverse(const std::array<double, 3>& degrees);
Affine3 scaling_inverse(const std::array<double, 3>& factors);

/// Trilinear resampling; voxels mapping outside the field become 0.
Volume resample_volume(const Volume& v, const Affine3& inverse);
/// Nearest-neighbour resampling; voxels mapping outside become background (0).
LabelMap resample_labels(const LabelMap& labels, const Affine3& inverse);

ShiftedSample rotate(const Volume& v, const LabelMap& labels, const std::array<double, 3>& degrees);
ShiftedSample scale(const Volume& v, const LabelMap& labels, const std::array<double, 3>& factors);
/// Separable Gaussian with radius ceil(3 sigma), renormalized at the borders.
Volume gaussian_smooth(const Volume& v, double sigma);
/// Per-axis sigmas in (d, h, w) order; a zero sigma leaves that axis untouched.
Volume gaussian_smooth(const Volume& v, const std::array<double, 3>& sigmas);
/// Min-max normalizes, raises to gamma, maps back to the original range.
Volume gamma_correct(const Volume& v, double gamma);

/// Per-axis angles ~ U[-x, x] degrees.
ShiftedSample apply_rotation(const Volume& v, const LabelMap& labels, double x_deg, std::uint64_t seed);
/// Per-axis log factors ~ U[-x, x], applied as exp.
ShiftedSample apply_scaling(const Volume& v, const LabelMap& labels, double x, std::uint64_t seed);
/// sigma ~ U[0, x] voxels.
ShiftedSample apply_gaussian_smooth(const Volume& v, const LabelMap& labels, double x, std::uint64_t seed);
/// log gamma ~ U[-x, x].
ShiftedSample apply_gamma(const Volume& v, const LabelMap& labels, double x, std::uint64_t seed);

ShiftedSample apply_shift(const Volume& v, const LabelMap& labels, const ShiftSpec& spec);

/// CDF matching of `target` onto `reference` using n_bins histograms.
Volume histogram_match(const Volume& target, const Volume& reference, std::size_t n_bins = 1024);

}  // namespace tta
