#include "tta/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kernels.hpp"
#include "tta/error.hpp"
#include "tta/rng.hpp"

namespace tta {
namespace {

Tensor& find_named(std::vector<NamedTensor>& list, std::string_view name, const std::string& owner) {
  for (auto& t : list) {
    if (t.name == name) return t.value;
  }
  throw ConfigError("layer '" + owner + "' has no tensor named '" + std::string(name) + "'");
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void add_into(Tensor& dst, Tensor&& src) {
  if (dst.empty()) {
    dst = std::move(src);
    return;
  }
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3d: return "Conv3d";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::NearestUpsample: return "NearestUpsample";
    case LayerKind::Softmax: return "Softmax";
    case LayerKind::Concat: return "Concat";
  }
  return "?";
}

Tensor& Layer::param(std::string_view short_name) { return find_named(params, short_name, name); }
const Tensor& Layer::param(std::string_view short_name) const {
  return find_named(const_cast<std::vector<NamedTensor>&>(params), short_name, name);
}
Tensor& Layer::buffer(std::string_view short_name) { return find_named(buffers, short_name, name); }
const Tensor& Layer::buffer(std::string_view short_name) const {
  return find_named(const_cast<std::vector<NamedTensor>&>(buffers), short_name, name);
}

Layer Layer::conv3d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel) {
  Layer l;
  l.kind = LayerKind::Conv3d;
  l.name = std::move(name);
  l.params.push_back({"weight", Tensor({out_channels, in_channels, kernel, kernel, kernel})});
  l.params.push_back({"bias", Tensor({out_channels})});
  return l;
}

Layer Layer::batch_norm(std::string name, std::size_t channels) {
  Layer l;
  l.kind = LayerKind::BatchNorm;
  l.name = std::move(name);
  l.params.push_back({"weight", Tensor({channels}, 1.0f)});
  l.params.push_back({"bias", Tensor({channels}, 0.0f)});
  l.buffers.push_back({"running_mean", Tensor({channels}, 0.0f)});
  l.buffers.push_back({"running_var", Tensor({channels}, 1.0f)});
  return l;
}

Layer Layer::relu(std::string name) {
  Layer l;
  l.kind = LayerKind::ReLU;
  l.name = std::move(name);
  return l;
}

Layer Layer::max_pool(std::string name) {
  Layer l;
  l.kind = LayerKind::MaxPool;
  l.name = std::move(name);
  return l;
}

Layer Layer::upsample(std::string name) {
  Layer l;
  l.kind = LayerKind::NearestUpsample;
  l.name = std::move(name);
  return l;
}

Layer Layer::concat(std::string name, int skip_from) {
  Layer l;
  l.kind = LayerKind::Concat;
  l.name = std::move(name);
  l.skip_from = skip_from;
  return l;
}

Layer Layer::softmax(std::string name) {
  Layer l;
  l.kind = LayerKind::Softmax;
  l.name = std::move(name);
  return l;
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

Network::Network(const Network& other)
    : layers_(other.layers_), num_classes_(other.num_classes_), source_importance_(other.source_importance_) {}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    layers_ = other.layers_;
    num_classes_ = other.num_classes_;
    source_importance_ = other.source_importance_;
    clear_cache();
  }
  return *this;
}

void Network::validate() {
  if (layers_.empty()) throw ConfigError("network has no layers");
  std::vector<std::size_t> channels(layers_.size());
  std::vector<int> level(layers_.size());
  std::size_t ch = 1;
  int lvl = 0;
  std::size_t softmax_count = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    switch (l.kind) {
      case LayerKind::Conv3d: {
        const Tensor& w = l.param("weight");
        const Tensor& b = l.param("bias");
        if (w.rank() != 5 || w.extent(2) != w.extent(3) || w.extent(2) != w.extent(4)) {
          throw ShapeError("conv layer '" + l.name + "' needs a cubic kernel, got " + shape_to_string(w.shape()));
        }
        if (w.extent(2) % 2 == 0) throw ShapeError("conv layer '" + l.name + "' kernel extent must be odd");
        if (w.extent(1) != ch) {
          throw ShapeError("conv layer '" + l.name + "' expects " + std::to_string(w.extent(1)) +
                           " input channels but receives " + std::to_string(ch));
        }
        if (b.rank() != 1 || b.extent(0) != w.extent(0)) {
          throw ShapeError("conv layer '" + l.name + "' bias does not match its output channels");
        }
        ch = w.extent(0);
        break;
      }
      case LayerKind::BatchNorm: {
        for (const auto& t : l.params) {
          if (t.value.rank() != 1 || t.value.extent(0) != ch) {
            throw ShapeError("batch norm '" + l.name + "' parameter '" + t.name + "' does not match " +
                             std::to_string(ch) + " channels");
          }
        }
        if (l.buffers.size() != 2) throw ConfigError("batch norm '" + l.name + "' needs running mean and variance");
        for (const auto& t : l.buffers) {
          if (t.value.rank() != 1 || t.value.extent(0) != ch) {
            throw ShapeError("batch norm '" + l.name + "' buffer '" + t.name + "' does not match channels");
          }
        }
        for (float v : l.buffer("running_var").values()) {
          if (!(v > 0.0f)) throw ConfigError("batch norm '" + l.name + "' running variance must be positive");
        }
        break;
      }
      case LayerKind::ReLU: break;
      case LayerKind::MaxPool: ++lvl; break;
      case LayerKind::NearestUpsample:
        if (lvl == 0) throw ConfigError("upsample '" + l.name + "' above the input resolution");
        --lvl;
        break;
      case LayerKind::Concat: {
        if (l.skip_from < 0 || static_cast<std::size_t>(l.skip_from) >= i) {
          throw ConfigError("concat '" + l.name + "' must reference an earlier layer");
        }
        if (level[static_cast<std::size_t>(l.skip_from)] != lvl) {
          throw ShapeError("concat '" + l.name + "' joins tensors at different resolutions");
        }
        ch += channels[static_cast<std::size_t>(l.skip_from)];
        break;
      }
      case LayerKind::Softmax:
        ++softmax_count;
        if (i + 1 != layers_.size()) throw ConfigError("softmax must be the final layer");
        break;
      default:
        throw UnknownLayerError("layer '" + l.name + "' has an unknown kind");
    }
    if (l.kind != LayerKind::Conv3d && l.kind != LayerKind::BatchNorm && l.has_params()) {
      throw ConfigError("layer '" + l.name + "' of kind " + to_string(l.kind) + " cannot carry parameters");
    }
    channels[i] = ch;
    level[i] = lvl;
  }
  if (softmax_count != 1) throw ConfigError("network must end with exactly one softmax");
  if (lvl != 0) throw ConfigError("network output is not at input resolution");
  if (ch < 2) throw ConfigError("network must predict at least 2 classes");
  num_classes_ = ch;
}

Network Network::reference(std::size_t num_classes, std::uint64_t seed) {
  std::vector<Layer> layers;
  layers.push_back(Layer::conv3d("enc1_conv", 1, 8, 3));
  layers.push_back(Layer::batch_norm("enc1_bn", 8));
  layers.push_back(Layer::relu("enc1_relu"));
  layers.push_back(Layer::max_pool("pool"));
  layers.push_back(Layer::conv3d("enc2_conv", 8, 16, 3));
  layers.push_back(Layer::batch_norm("enc2_bn", 16));
  layers.push_back(Layer::relu("enc2_relu"));
  layers.push_back(Layer::upsample("up"));
  layers.push_back(Layer::concat("skip_concat", 2));
  layers.push_back(Layer::conv3d("dec_conv", 24, 8, 3));
  layers.push_back(Layer::batch_norm("dec_bn", 8));
  layers.push_back(Layer::relu("dec_relu"));
  layers.push_back(Layer::conv3d("head_conv", 8, num_classes, 1));
  layers.push_back(Layer::softmax("softmax"));

  Rng rng(seed);
  for (Layer& l : layers) {
    if (l.kind != LayerKind::Conv3d) continue;
    Tensor& w = l.param("weight");
    const double fan_in = static_cast<double>(w.extent(1) * w.extent(2) * w.extent(3) * w.extent(4));
    const double bound = std::sqrt(6.0 / fan_in);
    for (float& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  return Network(std::move(layers));
}

std::size_t Network::spatial_divisor() const {
  int lvl = 0;
  int deepest = 0;
  for (const Layer& l : layers_) {
    if (l.kind == LayerKind::MaxPool) deepest = std::max(deepest, ++lvl);
    if (l.kind == LayerKind::NearestUpsample) --lvl;
  }
  return std::size_t{1} << deepest;
}

const Tensor& Network::input_of(std::size_t layer) const { return layer == 0 ? input_ : activations_[layer - 1]; }

void Network::clear_cache() {
  input_ = Tensor();
  activations_.clear();
  bn_cache_.clear();
  pool_argmax_.clear();
}

SoftPrediction Network::forward(const Tensor& x, bool training_mode) {
  return forward(x, training_mode ? BnMode::BatchUpdate : BnMode::Running);
}

void Network::recalibrate_batch_norm(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw ConfigError("batch norm recalibration needs at least one input");
  const std::vector<std::size_t> bn = batch_norm_layers();
  std::vector<std::vector<double>> mean_sum(layers_.size()), var_sum(layers_.size());
  for (const Tensor& x : inputs) {
    forward(x, BnMode::Batch);
    for (std::size_t i : bn) {
      const Tensor& in = input_of(i);
      std::vector<double> mean, var;
      kernels::channel_moments(in, mean, var);
      const double count = static_cast<double>(in.size() / in.extent(1));
      if (mean_sum[i].empty()) {
        mean_sum[i].assign(mean.size(), 0.0);
        var_sum[i].assign(mean.size(), 0.0);
      }
      for (std::size_t c = 0; c < mean.size(); ++c) {
        mean_sum[i][c] += mean[c];
        var_sum[i][c] += count > 1 ? var[c] * count / (count - 1) : var[c];
      }
    }
  }
  clear_cache();
  const double n = static_cast<double>(inputs.size());
  for (std::size_t i : bn) {
    Tensor& rm = layers_[i].buffer("running_mean");
    Tensor& rv = layers_[i].buffer("running_var");
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<float>(mean_sum[i][c] / n);
      rv[c] = static_cast<float>(std::max(var_sum[i][c] / n, 1e-12));
    }
  }
}

SoftPrediction Network::forward(const Tensor& x, BnMode mode) {
  if (x.rank() != 5) throw ShapeError("network input must be 5-D (N, 1, D, H, W), got " + shape_to_string(x.shape()));
  if (x.extent(1) != 1) {
    throw ShapeError("network input must have 1 channel, got " + std::to_string(x.extent(1)));
  }
  if (x.extent(0) == 0) throw ShapeError("network input batch is empty");
  const std::size_t div = spatial_divisor();
  for (std::size_t a = 2; a < 5; ++a) {
    if (x.extent(a) == 0 || x.extent(a) % div != 0) {
      throw ShapeError("spatial extents " + shape_to_string(x.shape()) + " must be positive multiples of " +
                       std::to_string(div));
    }
  }
  if (!x.all_finite()) throw NumericError("network input contains NaN or Inf");

  clear_cache();
  input_ = x;
  activations_.resize(layers_.size());
  bn_cache_.resize(layers_.size());
  pool_argmax_.resize(layers_.size());

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    const Tensor& in = input_of(i);
    switch (l.kind) {
      case LayerKind::Conv3d:
        activations_[i] = kernels::conv3d_forward(in, l.param("weight"), l.param("bias"));
        break;
      case LayerKind::BatchNorm: {
        const std::size_t ch = in.extent(1);
        BnCache& cache = bn_cache_[i];
        cache.mean.resize(ch);
        cache.inv_std.resize(ch);
        Tensor& rm = l.buffer("running_mean");
        Tensor& rv = l.buffer("running_var");
        if (mode == BnMode::Running) {
          cache.batch_stats = false;
          for (std::size_t c = 0; c < ch; ++c) {
            cache.mean[c] = rm[c];
            cache.inv_std[c] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(rv[c]) + kBnEpsilon));
          }
        } else {
          cache.batch_stats = true;
          std::vector<double> mean, var;
          kernels::channel_moments(in, mean, var);
          const double count = static_cast<double>(in.size() / ch);
          for (std::size_t c = 0; c < ch; ++c) {
            cache.mean[c] = static_cast<float>(mean[c]);
            cache.inv_std[c] = static_cast<float>(1.0 / std::sqrt(var[c] + kBnEpsilon));
            if (mode == BnMode::BatchUpdate) {
              const double unbiased = count > 1 ? var[c] * count / (count - 1) : var[c];
              rm[c] = static_cast<float>((1.0 - kBnMomentum) * rm[c] + kBnMomentum * mean[c]);
              rv[c] = static_cast<float>((1.0 - kBnMomentum) * rv[c] + kBnMomentum * unbiased);
            }
          }
        }
        const Tensor& gamma = l.param("weight");
        const Tensor& beta = l.param("bias");
        Tensor out(in.shape());
        const std::size_t vol = spatial_of(in).count();
        for (std::size_t n = 0; n < in.extent(0); ++n) {
          for (std::size_t c = 0; c < ch; ++c) {
            const float* src = in.data() + (n * ch + c) * vol;
            float* dst = out.data() + (n * ch + c) * vol;
            const float mu = cache.mean[c], is = cache.inv_std[c], g = gamma[c], b = beta[c];
            for (std::size_t v = 0; v < vol; ++v) dst[v] = g * ((src[v] - mu) * is) + b;
          }
        }
        activations_[i] = std::move(out);
        break;
      }
      case LayerKind::ReLU: {
        Tensor out(in.shape());
        const float* src = in.data();
        float* dst = out.data();
        for (std::size_t v = 0; v < in.size(); ++v) dst[v] = src[v] > 0.0f ? src[v] : 0.0f;
        activations_[i] = std::move(out);
        break;
      }
      case LayerKind::MaxPool:
        activations_[i] = kernels::max_pool2_forward(in, pool_argmax_[i]);
        break;
      case LayerKind::NearestUpsample:
        activations_[i] = kernels::upsample2_forward(in);
        break;
      case LayerKind::Concat:
        activations_[i] = kernels::concat_channels(in, activations_[static_cast<std::size_t>(l.skip_from)]);
        break;
      case LayerKind::Softmax:
        activations_[i] = kernels::softmax_channels(in);
        break;
    }
  }
  if (!activations_.back().all_finite()) {
    throw NumericError("network output is not finite; parameters have diverged");
  }
  return SoftPrediction{activations_.back()};
}

Gradients Network::backward(const Tensor& loss_grad) const {
  return backward(loss_grad, std::vector<bool>(layers_.size(), true));
}

Gradients Network::backward(const Tensor& loss_grad, const std::vector<bool>& param_layers) const {
  if (param_layers.size() != layers_.size()) throw ShapeError("parameter-layer flags do not match layer count");
  if (!has_forward_cache()) throw StateError("backward called before forward");
  if (loss_grad.shape() != activations_.back().shape()) {
    throw ShapeError("loss gradient shape " + shape_to_string(loss_grad.shape()) + " does not match output " +
                     shape_to_string(activations_.back().shape()));
  }
  Gradients grads;
  std::vector<Tensor> gz(layers_.size());
  gz.back() = loss_grad;

  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const Layer& l = layers_[idx];
    const Tensor& in = input_of(idx);
    const Tensor& out = activations_[idx];
    if (gz[idx].empty()) gz[idx] = Tensor(out.shape());
    const Tensor& g = gz[idx];
    Tensor grad_in;
    switch (l.kind) {
      case LayerKind::Conv3d: {
        if (param_layers[idx]) {
          Tensor gw(l.param("weight").shape());
          Tensor gb(l.param("bias").shape());
          kernels::conv3d_backward_params(g, in, gw, gb);
          grads.params[l.name + ".weight"] = std::move(gw);
          grads.params[l.name + ".bias"] = std::move(gb);
        }
        if (idx > 0) grad_in = kernels::conv3d_backward_input(g, l.param("weight"), in.shape());
        break;
      }
      case LayerKind::BatchNorm: {
        const BnCache& cache = bn_cache_[idx];
        const std::size_t ch = in.extent(1);
        const std::size_t batch = in.extent(0);
        const std::size_t vol = spatial_of(in).count();
        const double count = static_cast<double>(batch * vol);
        const Tensor& gamma = l.param("weight");
        Tensor dgamma({ch}), dbeta({ch});
        grad_in = Tensor(in.shape());
        for (std::size_t c = 0; c < ch; ++c) {
          const float mu = cache.mean[c], is = cache.inv_std[c];
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < batch; ++n) {
            const float* gp = g.data() + (n * ch + c) * vol;
            const float* xp = in.data() + (n * ch + c) * vol;
            for (std::size_t v = 0; v < vol; ++v) {
              sum_g += gp[v];
              sum_gx += static_cast<double>(gp[v]) * ((xp[v] - mu) * is);
            }
          }
          dgamma[c] = static_cast<float>(sum_gx);
          dbeta[c] = static_cast<float>(sum_g);
          const float scale = gamma[c] * is;
          if (cache.batch_stats) {
            const float mean_g = static_cast<float>(sum_g / count);
            const float mean_gx = static_cast<float>(sum_gx / count);
            for (std::size_t n = 0; n < batch; ++n) {
              const float* gp = g.data() + (n * ch + c) * vol;
              const float* xp = in.data() + (n * ch + c) * vol;
              float* dst = grad_in.data() + (n * ch + c) * vol;
              for (std::size_t v = 0; v < vol; ++v) {
                const float xhat = (xp[v] - mu) * is;
                dst[v] = scale * (gp[v] - mean_g - xhat * mean_gx);
              }
            }
          } else {
            for (std::size_t n = 0; n < batch; ++n) {
              const float* gp = g.data() + (n * ch + c) * vol;
              float* dst = grad_in.data() + (n * ch + c) * vol;
              for (std::size_t v = 0; v < vol; ++v) dst[v] = scale * gp[v];
            }
          }
        }
        if (param_layers[idx]) {
          grads.params[l.name + ".weight"] = std::move(dgamma);
          grads.params[l.name + ".bias"] = std::move(dbeta);
        }
        break;
      }
      case LayerKind::ReLU: {
        grad_in = Tensor(in.shape());
        const float* gp = g.data();
        const float* xp = in.data();
        float* dst = grad_in.data();
        for (std::size_t v = 0; v < in.size(); ++v) dst[v] = xp[v] > 0.0f ? gp[v] : 0.0f;
        break;
      }
      case LayerKind::MaxPool:
        grad_in = kernels::max_pool2_backward(g, pool_argmax_[idx], in.shape());
        break;
      case LayerKind::NearestUpsample:
        grad_in = kernels::upsample2_backward(g);
        break;
      case LayerKind::Concat: {
        Tensor ga, gb;
        kernels::split_channels(g, in.extent(1), ga, gb);
        add_into(gz[static_cast<std::size_t>(l.skip_from)], std::move(gb));
        grad_in = std::move(ga);
        break;
      }
      case LayerKind::Softmax:
        grad_in = kernels::softmax_backward(out, g);
        break;
    }
    if (idx > 0) add_into(gz[idx - 1], std::move(grad_in));
  }
  grads.activations = std::move(gz);
  return grads;
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> names;
  for (const Layer& l : layers_) {
    for (const auto& p : l.params) names.push_back(l.name + "." + p.name);
  }
  return names;
}

std::size_t Network::layer_of(std::string_view qualified_name) const {
  const auto dot = qualified_name.rfind('.');
  if (dot == std::string_view::npos) throw ConfigError("malformed parameter name '" + std::string(qualified_name) + "'");
  const std::string_view layer_name = qualified_name.substr(0, dot);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == layer_name) return i;
  }
  throw ConfigError("no layer named '" + std::string(layer_name) + "'");
}

Tensor& Network::parameter(std::string_view qualified_name) {
  const std::size_t i = layer_of(qualified_name);
  return layers_[i].param(qualified_name.substr(qualified_name.rfind('.') + 1));
}

const Tensor& Network::parameter(std::string_view qualified_name) const {
  return const_cast<Network*>(this)->parameter(qualified_name);
}

std::vector<std::size_t> Network::tunable_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].has_params()) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Network::batch_norm_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::BatchNorm) out.push_back(i);
  }
  return out;
}

void Network::set_source_importance(std::vector<float> importance) {
  if (importance.size() != tunable_layers().size()) {
    throw ShapeError("source importance has " + std::to_string(importance.size()) + " entries, network has " +
                     std::to_string(tunable_layers().size()) + " tunable layers");
  }
  source_importance_ = std::move(importance);
}

bool Network::same_parameters(const Network& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& a = layers_[i];
    const Layer& b = other.layers_[i];
    if (a.kind != b.kind || a.name != b.name || a.params.size() != b.params.size() ||
        a.buffers.size() != b.buffers.size()) {
      return false;
    }
    for (std::size_t j = 0; j < a.params.size(); ++j) {
      if (!bitwise_equal(a.params[j].value, b.params[j].value)) return false;
    }
    for (std::size_t j = 0; j < a.buffers.size(); ++j) {
      if (!bitwise_equal(a.buffers[j].value, b.buffers[j].value)) return false;
    }
  }
  return true;
}

std::vector<std::string> Network::changed_parameters(const Network& other) const {
  if (layers_.size() != other.layers_.size()) throw ShapeError("networks have different layer counts");
  std::vector<std::string> changed;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& a = layers_[i];
    const Layer& b = other.layers_[i];
    if (a.params.size() != b.params.size()) throw ShapeError("layer '" + a.name + "' differs structurally");
    for (std::size_t j = 0; j < a.params.size(); ++j) {
      if (!bitwise_equal(a.params[j].value, b.params[j].value)) changed.push_back(a.name + "." + a.params[j].name);
    }
  }
  return changed;
}

}  // namespace tta
