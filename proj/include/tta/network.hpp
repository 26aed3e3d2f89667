#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tta/prediction.hpp"
#include "tta/tensor.hpp"

namespace tta {

enum class LayerKind : std::uint8_t {
  Conv3d = 0,
  BatchNorm = 1,
  ReLU = 2,
  MaxPool = 3,
  NearestUpsample = 4,
  Softmax = 5,
  Concat = 6,
};

const char* to_string(LayerKind kind);

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// One node of the layer graph. Every layer reads the output of the layer
/// before it; Concat additionally appends the channels of `skip_from`.
///
/// Parameter layout:
///   Conv3d     params  {weight (Cout, Cin, k, k, k), bias (Cout)}
///   BatchNorm  params  {weight = scale (C), bias = shift (C)}
///              buffers {running_mean (C), running_var (C)}
struct Layer {
  LayerKind kind = LayerKind::ReLU;
  std::string name;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;
  int skip_from = -1;

  bool has_params() const { return !params.empty(); }
  Tensor& param(std::string_view short_name);
  const Tensor& param(std::string_view short_name) const;
  Tensor& buffer(std::string_view short_name);
  const Tensor& buffer(std::string_view short_name) const;

  friend bool operator==(const Layer&, const Layer&) = default;

  static Layer conv3d(std::string name, std::size_t in_channels, std::size_t out_channels,
                      std::size_t kernel);
  static Layer batch_norm(std::string name, std::size_t channels);
  static Layer relu(std::string name);
  static Layer max_pool(std::string name);
  static Layer upsample(std::string name);
  static Layer concat(std::string name, int skip_from);
  static Layer softmax(std::string name);
};

/// How BatchNorm layers normalize during a forward pass.
enum class BnMode {
  Running,      ///< use running statistics (inference)
  Batch,        ///< use batch statistics, leave running statistics alone
  BatchUpdate,  ///< use batch statistics and update running statistics (training)
};

/// Gradients from one backward pass. Parameter gradients are keyed by the
/// qualified name "<layer>.<param>"; activation gradients are indexed by
/// layer and have the shape of that layer's cached output.
struct Gradients {
  std::map<std::string, Tensor> params;
  std::vector<Tensor> activations;
};

inline constexpr float kBnEpsilon = 1e-5f;
inline constexpr float kBnMomentum = 0.1f;

class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers);

  // Copies carry the model (layers, importance) but not the forward cache.
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  /// Conv3d(1->8,k3)/BN/ReLU, MaxPool2, Conv3d(8->16,k3)/BN/ReLU,
  /// NearestUpsample2, Concat skip, Conv3d(24->8,k3)/BN/ReLU,
  /// Conv3d(8->C,k1), Softmax. Kaiming-uniform conv weights, zero biases,
  /// BN scale 1 and shift 0.
  static Network reference(std::size_t num_classes, std::uint64_t seed);

  SoftPrediction forward(const Tensor& x, bool training_mode);
  /// Replaces every BatchNorm running mean and variance with the average of
  /// the per-input batch statistics (unbiased variance) over `inputs`.
  void recalibrate_batch_norm(std::span<const Tensor> inputs);
  SoftPrediction forward(const Tensor& x, BnMode mode);

  /// Backpropagates dL/d(probabilities) through the cached forward pass.
  Gradients backward(const Tensor& loss_grad) const;
  /// As above, computing parameter gradients only for layers flagged in
  /// `param_layers` (indexed by layer). Activation gradients are always complete.
  Gradients backward(const Tensor& loss_grad, const std::vector<bool>& param_layers) const;

  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  /// Qualified names of every learnable parameter, in layer order.
  std::vector<std::string> parameter_names() const;
  Tensor& parameter(std::string_view qualified_name);
  const Tensor& parameter(std::string_view qualified_name) const;
  /// Index of the layer owning a qualified parameter name.
  std::size_t layer_of(std::string_view qualified_name) const;

  /// Layers that carry parameters (Conv3d and BatchNorm), in order. These
  /// are the candidates for layer-wise importance and selective updates.
  std::vector<std::size_t> tunable_layers() const;
  std::vector<std::size_t> batch_norm_layers() const;

  /// Output of every layer from the most recent forward pass.
  const std::vector<Tensor>& activations() const { return activations_; }
  bool has_forward_cache() const { return !activations_.empty(); }
  void clear_cache();

  /// Cached per-tunable-layer importance of the source model.
  const std::optional<std::vector<float>>& source_importance() const { return source_importance_; }
  void set_source_importance(std::vector<float> importance);
  void clear_source_importance() { source_importance_.reset(); }

  /// Required divisor of the input spatial extents.
  std::size_t spatial_divisor() const;

  /// True when every parameter and buffer tensor matches `other` bitwise.
  bool same_parameters(const Network& other) const;
  /// Qualified names of parameters whose values differ bitwise from `other`.
  std::vector<std::string> changed_parameters(const Network& other) const;

 private:
  struct BnCache {
    std::vector<float> mean;
    std::vector<float> inv_std;
    bool batch_stats = false;
  };

  void validate();
  const Tensor& input_of(std::size_t layer) const;

  std::vector<Layer> layers_;
  std::size_t num_classes_ = 0;
  std::optional<std::vector<float>> source_importance_;

  Tensor input_;
  std::vector<Tensor> activations_;
  std::vector<BnCache> bn_cache_;
  std::vector<std::vector<std::uint8_t>> pool_argmax_;
};

}  // namespace tta
