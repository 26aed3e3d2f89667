#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tta/adam.hpp"
#include "tta/adaptation.hpp"
#include "tta/checkpoint.hpp"
#include "tta/error.hpp"
#include "tta/harness/oracles.hpp"
#include "tta/losses.hpp"
#include "tta/phantom.hpp"
#include "tta/rng.hpp"
#include "tta/shift.hpp"

using namespace tta;

namespace {

Phantom small_phantom(std::uint64_t seed, std::size_t side = 16, double growth = 0.5) {
  PhantomSpec spec;
  spec.dims = {side, side, side};
  spec.seed = seed;
  spec.growth = growth;
  return generate_phantom(spec);
}

// Reference net with running statistics set from a few phantoms and a source
// importance cached, as a trained checkpoint would have.
Network prepared_network(std::uint64_t seed) {
  Network net = Network::reference(kPhantomClasses, seed);
  std::vector<Tensor> inputs;
  std::vector<Volume> vols;
  for (std::uint64_t s = 0; s < 4; ++s) {
    vols.push_back(small_phantom(100 + s).volume);
    inputs.push_back(to_batch(vols.back()));
  }
  net.recalibrate_batch_norm(inputs);
  cache_source_importance(net, to_batch(vols));
  return net;
}

bool non_bn_identical(const Network& a, const Network& b) {
  for (const auto& name : a.changed_parameters(b)) {
    if (name.find("_bn.") == std::string::npos) return false;
  }
  return true;
}

Network scalar_network() {
  std::vector<Layer> layers{Layer::conv3d("c", 1, 2, 1), Layer::softmax("softmax")};
  layers[0].param("weight")[0] = 0.5f;
  layers[0].param("weight")[1] = -0.25f;
  return Network(std::move(layers));
}

Gradients constant_gradients(const Network& net, float g) {
  Gradients grads;
  for (const auto& name : net.parameter_names()) grads.params[name] = Tensor(net.parameter(name).shape(), g);
  return grads;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Network net = scalar_network();
  const Network before = net;
  AdamState state;
  adam_step(net, constant_gradients(net, 0.0f), ParameterMask::all(net), state, 1e-3);
  EXPECT_TRUE(net.same_parameters(before));
  EXPECT_EQ(state.step(), 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Network net = scalar_network();
  const Network before = net;
  AdamState state;
  const double lr = 1e-3;
  adam_step(net, constant_gradients(net, 1.0f), ParameterMask::all(net), state, lr);
  // Bias-corrected first step: lr * g / (|g| + eps).
  const double expected = lr * 1.0 / (1.0 + 1e-8);
  for (const auto& name : net.parameter_names()) {
    for (std::size_t i = 0; i < net.parameter(name).size(); ++i) {
      EXPECT_NEAR(before.parameter(name)[i] - net.parameter(name)[i], expected, 1e-7) << name;
    }
  }
  // Constant gradient keeps the step at lr.
  const Network mid = net;
  adam_step(net, constant_gradients(net, 1.0f), ParameterMask::all(net), state, lr);
  EXPECT_NEAR(mid.parameter("c.bias")[0] - net.parameter("c.bias")[0], lr, 1e-7);
}

TEST(Adam, ParametersOutsideMaskNeverMove) {
  Network net = scalar_network();
  const Network before = net;
  AdamState state;
  adam_step(net, constant_gradients(net, 3.0f), ParameterMask({"c.bias"}), state, 1e-2);
  EXPECT_EQ(net.parameter("c.weight"), before.parameter("c.weight"));
  EXPECT_NE(net.parameter("c.bias"), before.parameter("c.bias"));
}

TEST(Adam, MissingGradientIsAnError) {
  Network net = scalar_network();
  AdamState state;
  Gradients grads;
  grads.params["c.weight"] = Tensor({2, 1, 1, 1, 1}, 1.0f);
  EXPECT_THROW(adam_step(net, grads, ParameterMask::all(net), state, 1e-3), ConfigError);
  grads.params["c.bias"] = Tensor({5}, 1.0f);
  EXPECT_THROW(adam_step(net, grads, ParameterMask::all(net), state, 1e-3), ShapeError);
}

TEST(ParameterMaskTest, BatchNormMaskHoldsExactlyScaleAndShift) {
  const Network net = Network::reference(5, 1);
  const ParameterMask m = ParameterMask::batch_norm(net);
  std::set<std::string> expected;
  for (std::size_t li : net.batch_norm_layers()) {
    expected.insert(net.layer(li).name + ".weight");
    expected.insert(net.layer(li).name + ".bias");
  }
  EXPECT_EQ(m.names(), expected);
  EXPECT_EQ(m.size(), 6u);
}

TEST(AdaptationConfigTest, Defaults) {
  const auto t = AdaptationConfig::for_strategy(Strategy::Tent);
  const auto k = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  const auto l = AdaptationConfig::for_strategy(Strategy::LayerInspect);
  EXPECT_DOUBLE_EQ(t.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(k.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(l.learning_rate, 1e-4);
  EXPECT_DOUBLE_EQ(k.lambda, 1.0);
  EXPECT_EQ(l.m, 1u);
  EXPECT_EQ(t.batch_size, 2u);
  EXPECT_EQ(t.num_passes, 1);
  EXPECT_EQ(kSeverePasses, 25);
  EXPECT_EQ(t.bn_stats_mode, BnStatsMode::Batch);
  AdaptationConfig bad = t;
  bad.lambda = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_strategy("sgd"), ConfigError);
  EXPECT_EQ(parse_strategy("entropy_kl"), Strategy::EntropyKL);
}

TEST(Tent, ZeroLearningRateKeepsSourceModel) {
  const Network source = prepared_network(2);
  AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::Tent);
  cfg.learning_rate = 0.0;
  cfg.num_passes = 3;
  const AdaptedModel am = adapt_tent(source, to_batch(small_phantom(7).volume), cfg);
  EXPECT_TRUE(am.network.same_parameters(source));
  ASSERT_EQ(am.log.size(), 3u);
  for (const auto& r : am.log) EXPECT_EQ(r.total, am.log.front().total);
}

TEST(Tent, OnlyBatchNormParametersChange) {
  const Network source = prepared_network(2);
  const AdaptedModel am =
      adapt_tent(source, to_batch(small_phantom(7).volume), AdaptationConfig::for_strategy(Strategy::Tent));
  EXPECT_FALSE(am.network.changed_parameters(source).empty());
  EXPECT_TRUE(non_bn_identical(am.network, source));
  EXPECT_EQ(am.mask, ParameterMask::batch_norm(source));
}

TEST(Tent, EmptyBatchIsRejected) {
  const Network source = prepared_network(2);
  EXPECT_THROW(adapt_tent(source, Tensor({0, 1, 16, 16, 16}), AdaptationConfig::for_strategy(Strategy::Tent)),
               Error);
  EXPECT_THROW(adapt_tent(source, Tensor({1, 1, 16, 16, 16}), AdaptationConfig::for_strategy(Strategy::EntropyKL)),
               ConfigError);
}

TEST(Tent, EntropyDropsOnSmoothedPhantomsInNineOfTen) {
  const Network source = prepared_network(3);
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Phantom p = small_phantom(200 + seed);
    ShiftSpec spec{ShiftKind::GaussianSmooth, 1.5, false, seed, {}};
    const ShiftedSample s = apply_shift(p.volume, p.labels, spec);
    const AdaptedModel am = adapt_tent(source, to_batch(s.volume), AdaptationConfig::for_strategy(Strategy::Tent));
    if (am.entropy_after < am.entropy_before) ++successes;
  }
  EXPECT_GE(successes, 9);
}

TEST(EntropyKl, LambdaZeroReproducesTentTrajectory) {
  const Network source = prepared_network(4);
  const Tensor x = to_batch(small_phantom(9).volume);
  AdaptationConfig tent = AdaptationConfig::for_strategy(Strategy::Tent);
  tent.num_passes = 4;
  AdaptationConfig ekl = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  ekl.num_passes = 4;
  ekl.lambda = 0.0;
  const ClassRatioPrior prior({0.9, 0.025, 0.025, 0.025, 0.025});
  const AdaptedModel a = adapt_tent(source, x, tent);
  const AdaptedModel b = adapt_entropy_kl(source, x, prior, ekl);
  EXPECT_TRUE(a.network.same_parameters(b.network));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].entropy, b.log[i].entropy);
  EXPECT_EQ(a.prediction.probabilities, b.prediction.probabilities);
}

TEST(EntropyKl, LargeLambdaPullsRatioTowardsPrior) {
  const Network source = prepared_network(5);
  const Phantom p = small_phantom(11);
  std::vector<double> counts(kPhantomClasses, 0.0);
  for (auto l : p.labels.values) counts[l] += 1.0;
  const ClassRatioPrior prior = ClassRatioPrior::floored(counts);
  const Tensor x = to_batch(p.volume);
  AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  cfg.lambda = 1e3;
  cfg.num_passes = 50;
  Network probe = source;
  const auto before = predicted_class_ratio(probe.forward(x, BnMode::Batch));
  const AdaptedModel am = adapt_entropy_kl(source, x, prior, cfg);
  const auto after = predicted_class_ratio(am.prediction);
  double l1_before = 0.0, l1_after = 0.0;
  for (std::size_t k = 0; k < kPhantomClasses; ++k) {
    l1_before += std::abs(before[k] - prior[k]);
    l1_after += std::abs(after[k] - prior[k]);
  }
  EXPECT_LT(l1_after, l1_before);
  EXPECT_TRUE(non_bn_identical(am.network, source));
  ASSERT_EQ(am.log.size(), 50u);
  EXPECT_GT(am.log.front().kl, 0.0);
}

TEST(EntropyKl, PriorSizeMismatchIsRejected) {
  const Network source = prepared_network(5);
  EXPECT_THROW(adapt_entropy_kl(source, to_batch(small_phantom(1).volume), ClassRatioPrior({0.5, 0.5}),
                                AdaptationConfig::for_strategy(Strategy::EntropyKL)),
               ConfigError);
}

TEST(TaylorImportance, ToyNetworkMatchesManualEvaluation) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const auto check = harness::toy_importance_check(seed);
    ASSERT_EQ(check.library.size(), 2u);
    EXPECT_LT(check.max_abs_error, 1e-5) << "seed " << seed;
  }
}

TEST(TaylorImportance, UnitNormAndNonnegative) {
  const Network net = prepared_network(6);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto theta = taylor_importance(net, to_batch(small_phantom(300 + s).volume));
    ASSERT_EQ(theta.values.size(), net.tunable_layers().size());
    double sq = 0.0;
    for (double v : theta.values) {
      EXPECT_GE(v, 0.0);
      sq += v * v;
    }
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(TaylorImportance, ZeroActivationsGiveZeroImportance) {
  const Network net = Network::reference(5, 3);  // zero biases
  const auto theta = taylor_importance(net, Tensor({1, 1, 8, 8, 8}, 0.0f));
  for (double v : theta.values) EXPECT_EQ(v, 0.0);
}

TEST(SourceImportance, CheckpointRoundTripAndDeterminism) {
  Network a = prepared_network(7);
  Network b = prepared_network(7);
  EXPECT_EQ(*a.source_importance(), *b.source_importance());
  const Network loaded = deserialize_checkpoint(serialize_checkpoint(a));
  EXPECT_EQ(*loaded.source_importance(), *a.source_importance());
  EXPECT_THROW(cache_source_importance(a, Tensor({0, 1, 8, 8, 8})), ConfigError);
}

TEST(SourceImportance, DisjointSubsetsAgree) {
  Network net = prepared_network(8);
  std::vector<Volume> first, second;
  for (std::uint64_t s = 0; s < 4; ++s) {
    first.push_back(small_phantom(400 + s).volume);
    second.push_back(small_phantom(500 + s).volume);
  }
  const auto a = taylor_importance(net, to_batch(first)).values;
  const auto b = taylor_importance(net, to_batch(second)).values;
  const double cosine = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);  // both unit norm
  EXPECT_GT(cosine, 0.9);
}

TEST(SelectLayers, Examples) {
  const ImportanceVector same{{0.5, 0.5, 0.5, 0.5}, Provenance::Source};
  EXPECT_EQ(select_layers(same, same, 2), (std::vector<std::size_t>{0, 1}));
  const ImportanceVector s{{1, 0, 0}, Provenance::Source}, t{{0, 1, 0}, Provenance::Target};
  EXPECT_EQ(select_layers(s, t, 1), (std::vector<std::size_t>{0}));
  EXPECT_EQ(select_layers(s, t, 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(select_layers(s, t, 4), ConfigError);
  EXPECT_THROW(select_layers(s, ImportanceVector{{1, 0}, Provenance::Target}, 1), ShapeError);
}

TEST(SelectLayers, MatchesBruteForceOracle) { EXPECT_EQ(harness::select_layers_mismatches(100, 77), 0u); }

TEST(SelectLayers, PermutationConsistent) {
  Rng r(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 7;
    ImportanceVector s, t;
    for (std::size_t i = 0; i < n; ++i) {
      s.values.push_back(r.uniform());
      t.values.push_back(r.uniform());
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[r.below(i + 1)]);
    ImportanceVector ps = s, pt = t;
    for (std::size_t i = 0; i < n; ++i) {
      ps.values[perm[i]] = s.values[i];
      pt.values[perm[i]] = t.values[i];
    }
    const auto base = select_layers(s, t, 3);
    const auto moved = select_layers(ps, pt, 3);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(moved[k], perm[base[k]]);
  }
}

TEST(LayerInspect, RequiresCachedSourceImportance) {
  Network net = prepared_network(9);
  net.clear_source_importance();
  EXPECT_THROW(adapt_layer_inspect(net, to_batch(small_phantom(1).volume),
                                   AdaptationConfig::for_strategy(Strategy::LayerInspect)),
               StateError);
}

TEST(LayerInspect, OnlySelectedLayerChangesAndSelectionIsStable) {
  const Network source = prepared_network(9);
  AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::LayerInspect);
  cfg.learning_rate = 1e-2;
  const Tensor x = to_batch(small_phantom(101).volume);
  const AdaptedModel a = adapt_layer_inspect(source, x, cfg);
  const AdaptedModel b = adapt_layer_inspect(source, x, cfg);
  ASSERT_EQ(a.selected_layers.size(), 1u);
  EXPECT_EQ(a.selected_layers, b.selected_layers);
  EXPECT_TRUE(a.network.same_parameters(b.network));
  const std::string& layer = source.layer(a.selected_layers[0]).name;
  const auto changed = a.network.changed_parameters(source);
  EXPECT_FALSE(changed.empty());
  for (const auto& name : changed) EXPECT_EQ(name.substr(0, name.find('.')), layer);
}

TEST(RunAdaptation, SingleSampleIsolation) {
  const Network source = prepared_network(10);
  const std::vector<Volume> both{small_phantom(1).volume, small_phantom(2).volume};
  const std::vector<Volume> only_a{both[0]};
  AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::Tent);
  cfg.num_passes = 2;
  const RunResult r2 = run_adaptation(source, both, cfg);
  const RunResult r1 = run_adaptation(source, only_a, cfg);
  ASSERT_EQ(r2.samples.size(), 2u);
  EXPECT_EQ(r2.samples[0].labels, r1.samples[0].labels);
  EXPECT_EQ(r2.samples[0].log, r1.samples[0].log);
  EXPECT_TRUE(r2.samples[0].model->same_parameters(*r1.samples[0].model));
  EXPECT_FALSE(r2.samples[0].model->same_parameters(*r2.samples[1].model));
  EXPECT_EQ(r2.backward_passes, 4u);
}

TEST(RunAdaptation, SingleSampleThreadsMatchSerial) {
  const Network source = prepared_network(10);
  const std::vector<Volume> data{small_phantom(1).volume, small_phantom(2).volume, small_phantom(3).volume};
  const AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::Tent);
  const RunResult serial = run_adaptation(source, data, cfg, {}, 1);
  const RunResult parallel = run_adaptation(source, data, cfg, {}, 3);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(serial.samples[i].labels, parallel.samples[i].labels);
}

TEST(RunAdaptation, FullDatasetPassCount) {
  const Network source = prepared_network(11);
  std::vector<Volume> data;
  for (std::uint64_t s = 0; s < 4; ++s) data.push_back(small_phantom(20 + s).volume);
  AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::Tent);
  cfg.batch_mode = BatchMode::FullDataset;
  cfg.batch_size = 2;
  cfg.num_passes = 3;
  const RunResult r = run_adaptation(source, data, cfg);
  EXPECT_EQ(r.backward_passes, 2u * 3u);
  ASSERT_EQ(r.samples.size(), 4u);
  EXPECT_EQ(r.samples[0].model, r.samples[3].model);
}

TEST(RunAdaptation, SeverePassCountHonored) {
  const Network source = prepared_network(12);
  const std::vector<Volume> data{small_phantom(30).volume};
  AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::Tent);
  cfg.num_passes = kSeverePasses;
  const RunResult r = run_adaptation(source, data, cfg);
  EXPECT_EQ(r.backward_passes, 25u);
  EXPECT_EQ(r.samples[0].log.size(), 25u);
}

TEST(RunAdaptation, EntropyKlNeedsPriors) {
  const Network source = prepared_network(12);
  const std::vector<Volume> data{small_phantom(30).volume, small_phantom(31).volume};
  const AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  EXPECT_THROW(run_adaptation(source, data, cfg), ConfigError);
  const std::vector<ClassRatioPrior> one{ClassRatioPrior({0.8, 0.05, 0.05, 0.05, 0.05})};
  EXPECT_NO_THROW(run_adaptation(source, data, cfg, one));
  EXPECT_THROW(run_adaptation(source, std::vector<Volume>{}, cfg, one), ConfigError);
}

TEST(Reproducibility, AdaptationLogsAreIdentical) {
  const Network source = prepared_network(13);
  const std::vector<Volume> data{small_phantom(40).volume, small_phantom(41).volume};
  AdaptationConfig cfg = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  cfg.num_passes = 3;
  const std::vector<ClassRatioPrior> prior{ClassRatioPrior({0.8, 0.05, 0.05, 0.05, 0.05})};
  const RunResult a = run_adaptation(source, data, cfg, prior);
  const RunResult b = run_adaptation(source, data, cfg, prior);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(a.samples[i].log, b.samples[i].log);
    EXPECT_EQ(a.samples[i].labels, b.samples[i].labels);
  }
}
