#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tta/harness/config.hpp"
#include "tta/harness/csv.hpp"
#include "tta/harness/stats.hpp"
#include "tta/network.hpp"
#include "tta/phantom.hpp"

namespace tta::harness {

using Logger = std::function<void(const std::string&)>;

struct CohortMember {
  std::size_t id = 0;
  double growth = 0.5;
  Phantom phantom;
};

/// Phantoms of one cohort. Seeds derive from (cfg.seed, tag, member index).
std::vector<CohortMember> make_cohort(const ExperimentConfig& cfg, const CohortSettings& cohort, std::uint64_t tag);
/// `per_bin` phantoms per growth bin, growth drawn inside each bin.
std::vector<CohortMember> make_growth_cohort(const ExperimentConfig& cfg, std::uint64_t tag);

/// Atlas over a cohort spanning g in [0, 1].
Atlas make_atlas(const ExperimentConfig& cfg);

struct TrainResult {
  Network network;
  /// Mean foreground Dice on the unshifted evaluation cohort.
  double in_distribution_dice = 0.0;
  std::vector<double> loss_log;
};

/// Cross-entropy training with Adam on augmented random crops, BatchNorm
/// recalibration on whole source volumes, and source importance caching.
/// Throws NumericError when the loss stops being finite.
TrainResult train_source(const ExperimentConfig& cfg, const Logger& log = {});

/// Mean foreground Dice of the source model (running statistics).
double evaluate_base(const Network& net, const std::vector<CohortMember>& cohort);

struct EvalRequest {
  std::vector<std::string> shift_kinds;
  /// Magnitudes per kind, parallel to shift_kinds; empty means the config grid.
  std::vector<std::vector<double>> magnitudes;
  std::vector<std::string> methods;
  std::vector<BatchMode> modes;
};

struct EvalOutput {
  std::vector<ResultRow> rows;
  std::vector<TimingRow> timings;
};

/// Evaluates every method in every mode on the shifted evaluation cohort.
EvalOutput adapt_eval(const ExperimentConfig& cfg, const Network& source, const Atlas& atlas,
                      const EvalRequest& request, const Logger& log = {});
EvalRequest default_eval_request(const ExperimentConfig& cfg);

enum class SweepAxis { Lambda, M, LearningRate };
SweepAxis parse_sweep_axis(const std::string& s);
const char* to_string(SweepAxis a);

/// EntropyKL over the lambda grid, or LayerInspect over the m / lr grids, on
/// rotation-shifted cohorts in single-sample mode.
EvalOutput sweep(const ExperimentConfig& cfg, const Network& source, const Atlas& atlas, SweepAxis axis,
                 const Logger& log = {});

/// Every configured method on unshifted phantoms across growth bins, single-sample mode.
EvalOutput growth_curve(const ExperimentConfig& cfg, const Network& source, const Atlas& atlas,
                        const Logger& log = {});

struct RowFilter {
  std::string method;  // empty matches any
  std::string mode;
  std::string shift;
  bool has_magnitude = false;
  double magnitude = 0.0;
  bool matches(const ResultRow& r) const;
};

struct Comparison {
  PairedTTest test;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::size_t pairs = 0;
};

/// Pairs rows on (shift, magnitude, axis, param, growth_bin, sample) and tests
/// mean Dice of b against a.
Comparison compare(const std::vector<ResultRow>& a, const RowFilter& fa, const std::vector<ResultRow>& b,
                   const RowFilter& fb);
std::string format_comparison(const Comparison& c, double alpha = 0.05);

/// Source-model checkpoint location inside an output directory.
std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir);

}  // namespace tta::harness
