#include "tta/adaptation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "tta/error.hpp"

namespace tta {
namespace {

std::vector<bool> layers_in_mask(const Network& net, const ParameterMask& mask) {
  std::vector<bool> flags(net.num_layers(), false);
  for (const std::string& name : mask.names()) flags[net.layer_of(name)] = true;
  return flags;
}

Objective evaluate(const SoftPrediction& pred, const AdaptationConfig& cfg, const ClassRatioPrior* prior) {
  if (cfg.strategy == Strategy::EntropyKL) return entropy_kl_objective(pred, *prior, cfg.lambda);
  return shannon_entropy_objective(pred);
}

PassRecord make_record(int pass, const LossValue& v) {
  PassRecord r;
  r.pass = pass;
  r.total = v.total;
  for (const auto& [name, value] : v.components) {
    if (name == "entropy") r.entropy = value;
    if (name == "kl") r.kl = value;
  }
  return r;
}

// forward -> loss -> backward -> masked Adam step on one batch.
LossValue optimization_step(Network& net, const Tensor& x, const ParameterMask& mask, const std::vector<bool>& flags,
                            AdamState& state, const AdaptationConfig& cfg, const ClassRatioPrior* prior) {
  const SoftPrediction pred = net.forward(x, cfg.forward_mode());
  const Objective obj = evaluate(pred, cfg, prior);
  const Gradients grads = net.backward(obj.grad, flags);
  adam_step(net, grads, mask, state, cfg.learning_rate);
  return obj.value;
}

AdaptedModel adapt_with_mask(const Network& source, const Tensor& target, const AdaptationConfig& cfg,
                             ParameterMask mask, const ClassRatioPrior* prior) {
  if (target.rank() != 5 || target.extent(0) == 0) throw ShapeError("adaptation needs a nonempty target batch");
  AdaptedModel out;
  out.network = source;
  out.source = &source;
  out.mask = std::move(mask);
  const std::vector<bool> flags = layers_in_mask(out.network, out.mask);
  AdamState state;
  for (int pass = 0; pass < cfg.num_passes; ++pass) {
    const LossValue v = optimization_step(out.network, target, out.mask, flags, state, cfg, prior);
    out.log.push_back(make_record(pass, v));
    ++out.backward_passes;
  }
  out.prediction = out.network.forward(target, cfg.forward_mode());
  out.entropy_after = shannon_entropy(out.prediction).total;
  out.entropy_before = out.log.empty() ? out.entropy_after : out.log.front().entropy;
  out.network.clear_cache();
  return out;
}

void require_strategy(const AdaptationConfig& cfg, Strategy s) {
  cfg.validate();
  if (cfg.strategy != s) {
    throw ConfigError(std::string("configuration selects ") + to_string(cfg.strategy) + ", expected " + to_string(s));
  }
}

ImportanceVector stored_source_importance(const Network& net) {
  if (!net.source_importance()) {
    throw StateError("network has no cached source importance; run cache_source_importance after training");
  }
  const auto& v = *net.source_importance();
  return ImportanceVector{std::vector<double>(v.begin(), v.end()), Provenance::Source};
}

std::vector<std::size_t> layer_inspect_selection(const Network& source, const Tensor& target, std::size_t m) {
  const ImportanceVector theta_s = stored_source_importance(source);
  const ImportanceVector theta_t = taylor_importance(source, target);
  const std::vector<std::size_t> picks = select_layers(theta_s, theta_t, m);
  const std::vector<std::size_t> tunable = source.tunable_layers();
  std::vector<std::size_t> layers;
  for (std::size_t p : picks) layers.push_back(tunable[p]);
  return layers;
}

AdaptedModel adapt_dispatch(const Network& source, const Tensor& x, const AdaptationConfig& cfg,
                            const ClassRatioPrior* prior) {
  switch (cfg.strategy) {
    case Strategy::Tent: return adapt_tent(source, x, cfg);
    case Strategy::EntropyKL: return adapt_entropy_kl(source, x, *prior, cfg);
    case Strategy::LayerInspect: return adapt_layer_inspect(source, x, cfg);
  }
  throw ConfigError("unknown strategy");
}

ClassRatioPrior mean_prior(std::span<const ClassRatioPrior> priors, std::size_t first, std::size_t count) {
  if (priors.size() == 1) return priors.front();
  std::vector<double> avg(priors[first].size(), 0.0);
  for (std::size_t i = first; i < first + count; ++i) {
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += priors[i][k];
  }
  return ClassRatioPrior::floored(avg);
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Tent: return "tent";
    case Strategy::EntropyKL: return "entropy_kl";
    case Strategy::LayerInspect: return "layer_inspect";
  }
  return "?";
}

const char* to_string(BatchMode m) { return m == BatchMode::SingleSample ? "single_sample" : "full_dataset"; }
const char* to_string(BnStatsMode m) { return m == BnStatsMode::Batch ? "batch" : "running"; }

Strategy parse_strategy(std::string_view s) {
  if (s == "tent") return Strategy::Tent;
  if (s == "entropy_kl") return Strategy::EntropyKL;
  if (s == "layer_inspect") return Strategy::LayerInspect;
  throw ConfigError("unknown strategy '" + std::string(s) + "' (tent, entropy_kl, layer_inspect)");
}

BatchMode parse_batch_mode(std::string_view s) {
  if (s == "single_sample") return BatchMode::SingleSample;
  if (s == "full_dataset") return BatchMode::FullDataset;
  throw ConfigError("unknown batch mode '" + std::string(s) + "' (single_sample, full_dataset)");
}

BnStatsMode parse_bn_stats_mode(std::string_view s) {
  if (s == "batch") return BnStatsMode::Batch;
  if (s == "running") return BnStatsMode::Running;
  throw ConfigError("unknown BatchNorm statistics mode '" + std::string(s) + "' (batch, running)");
}

AdaptationConfig AdaptationConfig::for_strategy(Strategy s) {
  AdaptationConfig cfg;
  cfg.strategy = s;
  cfg.learning_rate = s == Strategy::LayerInspect ? kLayerInspectLearningRate : kDefaultLearningRate;
  return cfg;
}

void AdaptationConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (num_passes < 1) throw ConfigError("num_passes must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be nonnegative");
  if (m < 1) throw ConfigError("m must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

AdaptedModel adapt_tent(const Network& source, const Tensor& target, const AdaptationConfig& cfg) {
  require_strategy(cfg, Strategy::Tent);
  return adapt_with_mask(source, target, cfg, ParameterMask::batch_norm(source), nullptr);
}

AdaptedModel adapt_entropy_kl(const Network& source, const Tensor& target, const ClassRatioPrior& prior,
                              const AdaptationConfig& cfg) {
  require_strategy(cfg, Strategy::EntropyKL);
  if (prior.size() != source.num_classes()) {
    throw ConfigError("class ratio prior has " + std::to_string(prior.size()) + " entries, network predicts " +
                      std::to_string(source.num_classes()) + " classes");
  }
  return adapt_with_mask(source, target, cfg, ParameterMask::batch_norm(source), &prior);
}

AdaptedModel adapt_layer_inspect(const Network& source, const Tensor& target, const AdaptationConfig& cfg) {
  require_strategy(cfg, Strategy::LayerInspect);
  const std::vector<std::size_t> layers = layer_inspect_selection(source, target, cfg.m);
  AdaptedModel out = adapt_with_mask(source, target, cfg, ParameterMask::layers(source, layers), nullptr);
  out.selected_layers = layers;
  return out;
}

ImportanceVector taylor_importance(const Network& net, const Tensor& data, const LossFunction& loss) {
  if (data.rank() != 5 || data.extent(0) == 0) throw ShapeError("importance needs a nonempty data batch");
  Network work = net;
  const std::vector<std::size_t> tunable = work.tunable_layers();
  const std::vector<bool> no_params(work.num_layers(), false);
  std::vector<std::vector<double>> per_filter(tunable.size());
  const std::size_t n_samples = data.extent(0);

  for (std::size_t n = 0; n < n_samples; ++n) {
    const SoftPrediction pred = work.forward(data.batch_slice(n, 1), BnMode::Running);
    const Objective obj = loss ? loss(pred) : shannon_entropy_objective(pred);
    const Gradients g = work.backward(obj.grad, no_params);
    for (std::size_t t = 0; t < tunable.size(); ++t) {
      const Tensor& z = work.activations()[tunable[t]];
      const Tensor& gz = g.activations[tunable[t]];
      const std::size_t filters = z.extent(1);
      const std::size_t vol = spatial_of(z).count();
      per_filter[t].resize(filters, 0.0);
      for (std::size_t k = 0; k < filters; ++k) {
        const float* zp = z.data() + k * vol;
        const float* gp = gz.data() + k * vol;
        double sum = 0.0;
        for (std::size_t v = 0; v < vol; ++v) sum += static_cast<double>(gp[v]) * zp[v];
        per_filter[t][k] += sum;
      }
    }
  }

  ImportanceVector out;
  out.values.resize(tunable.size(), 0.0);
  for (std::size_t t = 0; t < tunable.size(); ++t) {
    for (double s : per_filter[t]) out.values[t] += std::abs(s / static_cast<double>(n_samples));
  }
  double norm = 0.0;
  for (double v : out.values) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : out.values) v /= norm;
  }
  return out;
}

ImportanceVector cache_source_importance(Network& net, const Tensor& source_data) {
  if (source_data.rank() != 5 || source_data.extent(0) == 0) {
    throw ConfigError("cache_source_importance needs source-distribution data");
  }
  ImportanceVector theta = taylor_importance(net, source_data);
  theta.provenance = Provenance::Source;
  std::vector<float> stored(theta.values.begin(), theta.values.end());
  net.set_source_importance(std::move(stored));
  return theta;
}

std::vector<std::size_t> select_layers(const ImportanceVector& source, const ImportanceVector& target, std::size_t m) {
  if (source.values.size() != target.values.size()) {
    throw ShapeError("importance vectors have " + std::to_string(source.values.size()) + " and " +
                     std::to_string(target.values.size()) + " layers");
  }
  const std::size_t n = source.values.size();
  if (m < 1 || m > n) {
    throw ConfigError("cannot select m = " + std::to_string(m) + " of " + std::to_string(n) + " layers");
  }
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = std::abs(source.values[i] - target.values[i]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return diff[a] > diff[b]; });
  order.resize(m);
  return order;
}

RunResult run_adaptation(const Network& source, std::span<const Volume> dataset, const AdaptationConfig& cfg,
                         std::span<const ClassRatioPrior> priors, std::size_t threads) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("adaptation dataset is empty");
  if (cfg.strategy == Strategy::EntropyKL && priors.size() != 1 && priors.size() != dataset.size()) {
    throw ConfigError("EntropyKL needs one shared prior or one prior per sample");
  }
  const auto prior_for = [&](std::size_t i) -> const ClassRatioPrior* {
    if (cfg.strategy != Strategy::EntropyKL) return nullptr;
    return priors.size() == 1 ? &priors[0] : &priors[i];
  };

  RunResult result;
  result.samples.resize(dataset.size());

  if (cfg.batch_mode == BatchMode::SingleSample) {
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> passes{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= dataset.size()) return;
        try {
          AdaptedModel am = adapt_dispatch(source, to_batch(dataset[i]), cfg, prior_for(i));
          SampleOutcome& o = result.samples[i];
          o.labels = am.prediction.argmax(0);
          o.entropy_before = am.entropy_before;
          o.entropy_after = am.entropy_after;
          o.log = std::move(am.log);
          o.selected_layers = std::move(am.selected_layers);
          o.model = std::make_shared<const Network>(std::move(am.network));
          passes += am.backward_passes;
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = dataset.size();
        }
      }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, dataset.size());
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    result.backward_passes = passes;
    return result;
  }

  // Full-dataset mode: one model adapted over all batches.
  auto net = std::make_shared<Network>(source);
  ParameterMask mask;
  std::vector<std::size_t> selected;
  if (cfg.strategy == Strategy::LayerInspect) {
    selected = layer_inspect_selection(source, to_batch(dataset), cfg.m);
    mask = ParameterMask::layers(source, selected);
  } else {
    mask = ParameterMask::batch_norm(source);
  }
  const std::vector<bool> flags = layers_in_mask(*net, mask);
  AdamState state;
  std::vector<PassRecord> log;
  for (int pass = 0; pass < cfg.num_passes; ++pass) {
    for (std::size_t first = 0; first < dataset.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, dataset.size() - first);
      const Tensor x = to_batch(dataset.subspan(first, count));
      std::optional<ClassRatioPrior> prior;
      if (cfg.strategy == Strategy::EntropyKL) prior = mean_prior(priors, first, count);
      const LossValue v = optimization_step(*net, x, mask, flags, state, cfg, prior ? &*prior : nullptr);
      log.push_back(make_record(pass, v));
      ++result.backward_passes;
    }
  }
  net->clear_cache();
  Network before = source;
  Network after = *net;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor x = to_batch(dataset[i]);
    SampleOutcome& o = result.samples[i];
    o.entropy_before = shannon_entropy(before.forward(x, cfg.forward_mode())).total;
    const SoftPrediction pred = after.forward(x, cfg.forward_mode());
    o.entropy_after = shannon_entropy(pred).total;
    o.labels = pred.argmax(0);
    o.log = log;
    o.selected_layers = selected;
    o.model = net;
  }
  return result;
}

}  // namespace tta
