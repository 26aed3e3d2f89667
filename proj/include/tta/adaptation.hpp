#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tta/adam.hpp"
#include "tta/losses.hpp"
#include "tta/network.hpp"
#include "tta/volume.hpp"

namespace tta {

enum class Strategy { Tent, EntropyKL, LayerInspect };
enum class BatchMode { SingleSample, FullDataset };
enum class BnStatsMode { Batch, Running };

const char* to_string(Strategy s);
const char* to_string(BatchMode m);
const char* to_string(BnStatsMode m);
Strategy parse_strategy(std::string_view s);
BatchMode parse_batch_mode(std::string_view s);
BnStatsMode parse_bn_stats_mode(std::string_view s);

inline constexpr double kDefaultLearningRate = 1e-3;
inline constexpr double kLayerInspectLearningRate = 1e-4;
inline constexpr int kDefaultPasses = 1;
/// Pass count for severe, scanner-level shifts.
inline constexpr int kSeverePasses = 25;

struct AdaptationConfig {
  Strategy strategy = Strategy::Tent;
  double learning_rate = kDefaultLearningRate;
  int num_passes = kDefaultPasses;
  double lambda = 1.0;
  std::size_t m = 1;
  BatchMode batch_mode = BatchMode::SingleSample;
  std::size_t batch_size = 2;
  BnStatsMode bn_stats_mode = BnStatsMode::Batch;

  /// Defaults for a strategy: lr 1e-3 for TENT and EntropyKL, 1e-4 for LayerInspect.
  static AdaptationConfig for_strategy(Strategy s);
  void validate() const;
  BnMode forward_mode() const { return bn_stats_mode == BnStatsMode::Batch ? BnMode::Batch : BnMode::Running; }
};

struct PassRecord {
  int pass = 0;
  double total = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  friend bool operator==(const PassRecord&, const PassRecord&) = default;
};

struct AdaptedModel {
  Network network;
  const Network* source = nullptr;
  ParameterMask mask;
  std::vector<PassRecord> log;
  /// Network layer indices selected by LayerInspect; empty otherwise.
  std::vector<std::size_t> selected_layers;
  /// The adapted network applied to the data it was adapted on.
  SoftPrediction prediction;
  double entropy_before = 0.0;
  double entropy_after = 0.0;
  std::size_t backward_passes = 0;
};

AdaptedModel adapt_tent(const Network& source, const Tensor& target, const AdaptationConfig& cfg);
AdaptedModel adapt_entropy_kl(const Network& source, const Tensor& target, const ClassRatioPrior& prior,
                              const AdaptationConfig& cfg);
AdaptedModel adapt_layer_inspect(const Network& source, const Tensor& target, const AdaptationConfig& cfg);

enum class Provenance { Source, Target };

/// Per-tunable-layer Taylor importance, L2-normalized across layers.
struct ImportanceVector {
  std::vector<double> values;
  Provenance provenance = Provenance::Target;
};

using LossFunction = std::function<Objective(const SoftPrediction&)>;

/// For every tunable layer l with output z (filters k):
///   theta_l = sum_k | (1/N) sum_n sum_voxels dL_n/dz * z |
/// with L_n the loss of sample n alone, followed by L2 normalization over
/// layers. Forward passes use running BatchNorm statistics.
ImportanceVector taylor_importance(const Network& net, const Tensor& data, const LossFunction& loss = {});

/// Computes the importance on source-distribution data and stores it in `net`
/// so that it is written into the checkpoint.
ImportanceVector cache_source_importance(Network& net, const Tensor& source_data);

/// Indices of the m entries with the largest |source - target|, largest
/// first, ties broken by the lower index.
std::vector<std::size_t> select_layers(const ImportanceVector& source, const ImportanceVector& target, std::size_t m);

struct SampleOutcome {
  std::vector<std::uint8_t> labels;
  double entropy_before = 0.0;
  double entropy_after = 0.0;
  std::vector<PassRecord> log;
  std::vector<std::size_t> selected_layers;
  std::shared_ptr<const Network> model;
};

struct RunResult {
  std::vector<SampleOutcome> samples;
  std::size_t backward_passes = 0;
};

/// Single-sample mode adapts a fresh copy of `source` per volume; full-dataset
/// mode adapts one copy over batches of cfg.batch_size and predicts every
/// volume with it. `priors` holds one shared prior or one per volume
/// (EntropyKL only). Single-sample work is spread over `threads` workers.
RunResult run_adaptation(const Network& source, std::span<const Volume> dataset, const AdaptationConfig& cfg,
                         std::span<const ClassRatioPrior> priors = {}, std::size_t threads = 1);

}  // namespace tta
