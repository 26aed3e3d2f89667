#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tta/adaptation.hpp"
#include "tta/volume.hpp"

namespace tta::harness {

struct PhantomSettings {
  Dims grid{64, 64, 64};
  float voxel_size_mm = 0.6f;
  double noise = 0.06;
  double bias = 0.05;
};

struct CohortSettings {
  std::size_t count = 20;
  double growth_min = 0.35;
  double growth_max = 0.65;
};

/// Maximum magnitude per shift kind, used both as training augmentation
/// ranges and as the upper end of evaluation grids.
struct ShiftRanges {
  double rotation = 0.0;
  double scaling = 0.0;
  double smoothing = 0.0;
  double gamma = 0.0;
};

struct SourceSettings {
  CohortSettings cohort{24, 0.35, 0.65};
  std::size_t steps = 600;
  std::size_t batch_size = 1;
  /// Random crop edge length; 0 trains on whole volumes.
  std::size_t crop = 0;
  /// Chance that each augmentation step is applied to a training sample.
  double augment_probability = 0.5;
  double learning_rate = 1e-2;
  ShiftRanges augmentation{18.0, 0.16, 0.8, 0.48};
  /// Volumes used to estimate the source importance vector.
  std::size_t importance_samples = 8;
  double min_dice = 0.85;
};

struct ShiftGrids {
  std::vector<double> rotation{0, 5, 10, 20, 30, 45};
  std::vector<double> scaling{0, 0.1, 0.2, 0.3, 0.4};
  std::vector<double> smoothing{0, 0.5, 1, 1.5, 2};
  std::vector<double> gamma{0, 0.3, 0.6, 0.9, 1.2};

  const std::vector<double>& of(const std::string& kind) const;
  ShiftRanges maxima() const;
};

struct SweepSettings {
  std::vector<double> rotations{30};
  std::vector<double> lambda{0, 0.1, 0.5, 1, 2, 5, 10};
  std::vector<std::size_t> m{1, 2, 3, 4, 5, 6, 7};
  std::vector<double> lr{1e-5, 1e-4, 1e-3, 1e-2};
};

struct GrowthSettings {
  std::size_t bins = 5;
  std::size_t per_bin = 4;
};

struct AtlasSettings {
  std::size_t cohort = 20;
  std::size_t growth_bins = 5;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::filesystem::path output_dir = "tta_out";
  PhantomSettings phantom;
  SourceSettings source;
  CohortSettings evaluation{20, 0.35, 0.65};
  ShiftGrids shifts;
  /// Shift kinds evaluated by adapt-eval.
  std::vector<std::string> shift_kinds{"rotation", "scaling", "smoothing", "gamma"};
  std::vector<std::string> methods{"none", "histogram_match", "tent", "entropy_kl", "layer_inspect"};
  std::vector<BatchMode> modes{BatchMode::SingleSample, BatchMode::FullDataset};
  AdaptationConfig tent = AdaptationConfig::for_strategy(Strategy::Tent);
  AdaptationConfig entropy_kl = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  AdaptationConfig layer_inspect = AdaptationConfig::for_strategy(Strategy::LayerInspect);
  SweepSettings sweep;
  GrowthSettings growth;
  AtlasSettings atlas;

  /// Throws ConfigError on empty grids, unknown names, or training
  /// augmentation that is not strictly below the evaluation maximum.
  void validate() const;
  const AdaptationConfig& adaptation_for(const std::string& method) const;
};

/// Parses JSON text; unknown keys are rejected.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace tta::harness
