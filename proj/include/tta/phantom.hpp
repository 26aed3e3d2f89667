#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tta/losses.hpp"
#include "tta/volume.hpp"

namespace tta {

/// Background plus choroid plexus, posterior ventricle horn, cerebellum and
/// cavum septum pellucidum.
inline constexpr std::size_t kPhantomClasses = 5;
inline constexpr std::size_t kPhantomStructures = 4;

struct PhantomSpec {
  Dims dims{64, 64, 64};
  float voxel_size_mm = 0.6f;
  std::size_t num_structures = kPhantomStructures;
  /// Developmental stage in [0, 1]. Larger g gives larger structures with
  /// stronger contrast against the background.
  double growth = 0.5;
  /// Standard deviation of the multiplicative speckle field.
  double noise = 0.06;
  /// Amplitude of the smooth multiplicative bias field.
  double bias = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  Volume volume;
  LabelMap labels;
};

/// Base intensity of class k at growth g (noise and bias excluded).
double phantom_class_level(std::size_t k, double growth);

Phantom generate_phantom(const PhantomSpec& spec);

/// Maps g in [0, 1] onto one of n equal-width bins.
std::size_t growth_bin_of(double growth, std::size_t n_bins);

/// Plot-axis gestational week for g (linear 18..26).
double growth_to_week(double growth);

struct AtlasEntry {
  const Volume* volume = nullptr;
  const LabelMap* labels = nullptr;
  double growth = 0.5;
};

struct Atlas {
  Volume mean_intensity;
  /// frequency[k] holds the per-voxel fraction of the cohort labelled k.
  std::vector<Volume> frequency;
  std::size_t num_classes = 0;
  std::size_t growth_bins = 1;
  /// Per growth bin: number of cohort members and tau (empty for an empty bin).
  std::vector<std::size_t> bin_counts;
  std::vector<std::vector<double>> class_ratios;

  /// Argmax of the per-voxel label frequency over the whole cohort, ties to
  /// the lower class.
  LabelMap argmax_labels() const;

  friend bool operator==(const Atlas&, const Atlas&) = default;
};

/// Voxelwise averaging over a pre-aligned cohort. tau(k) of a bin is the
/// fraction of voxels whose argmax frequency (over that bin's members) is k.
Atlas build_atlas(std::span<const AtlasEntry> cohort, std::size_t growth_bins,
                  std::size_t num_classes = kPhantomClasses);
Atlas build_atlas(std::span<const Phantom> cohort, std::span<const double> growths, std::size_t growth_bins,
                  std::size_t num_classes = kPhantomClasses);

/// Floored, renormalized tau of one growth bin.
ClassRatioPrior class_ratio_prior(const Atlas& atlas, std::size_t growth_bin);

}  // namespace tta
