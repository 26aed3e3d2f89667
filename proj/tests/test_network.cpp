#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tta/error.hpp"
#include "tta/harness/gradcheck.hpp"
#include "tta/losses.hpp"
#include "tta/network.hpp"
#include "tta/phantom.hpp"
#include "tta/rng.hpp"
#include "tta/volume.hpp"

using namespace tta;

namespace {

Tensor random_input(Shape shape, std::uint64_t seed) {
  Tensor x(std::move(shape));
  Rng r(seed);
  for (float& v : x.values()) v = static_cast<float>(r.uniform());
  return x;
}

// Running statistics away from the defaults, so that inference mode is not
// an identity normalization.
void perturb_running_stats(Network& net, std::uint64_t seed) {
  Rng r(seed);
  std::vector<Tensor> inputs{random_input({1, 1, 4, 4, 4}, seed), random_input({1, 1, 4, 4, 4}, seed + 1)};
  net.recalibrate_batch_norm(inputs);
  for (const std::string& name : net.parameter_names()) {
    if (name.find("_bn.") == std::string::npos) continue;
    for (float& v : net.parameter(name).values()) v += static_cast<float>(r.uniform(-0.3, 0.3));
  }
}

std::filesystem::path golden_dir() { return std::filesystem::path(TTA_GOLDEN_DIR); }

}  // namespace

TEST(Network, ProbabilitiesSumToOne) {
  Network net = Network::reference(5, 7);
  const Tensor x = random_input({2, 1, 8, 8, 8}, 3);
  const SoftPrediction p = net.forward(x, BnMode::Batch);
  ASSERT_EQ(p.probabilities.shape(), (Shape{2, 5, 8, 8, 8}));
  Rng pick(11);
  const std::size_t voxels = 8 * 8 * 8;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = pick.below(2), v = pick.below(voxels);
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      const float q = p.probabilities[(n * 5 + c) * voxels + v];
      ASSERT_GE(q, 0.0f);
      ASSERT_LE(q, 1.0f);
      sum += q;
    }
    ASSERT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(Network, ZeroInputGivesUniformOutput) {
  Network net = Network::reference(5, 9);
  const Tensor x({1, 1, 8, 8, 8}, 0.0f);
  for (BnMode mode : {BnMode::Running, BnMode::Batch}) {
    const SoftPrediction p = net.forward(x, mode);
    for (float q : p.probabilities.values()) EXPECT_NEAR(q, 0.2f, 1e-6f);
  }
}

TEST(Network, OutputMatchesInputResolution) {
  Network net = Network::reference(3, 1);
  const SoftPrediction p = net.forward(random_input({1, 1, 6, 4, 8}, 2), BnMode::Running);
  EXPECT_EQ(p.probabilities.shape(), (Shape{1, 3, 6, 4, 8}));
  EXPECT_EQ(net.activations().size(), net.num_layers());
}

TEST(Network, GoldenChecksumOnSeededPhantom) {
  PhantomSpec spec;
  spec.dims = {8, 8, 8};
  spec.seed = 5;
  const Phantom ph = generate_phantom(spec);
  Network net = Network::reference(5, 13);
  const SoftPrediction p = net.forward(to_batch(ph.volume), BnMode::Running);
  double sum = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < p.probabilities.size(); ++i) {
    sum += p.probabilities[i];
    weighted += p.probabilities[i] * static_cast<double>(i % 97 + 1);
  }
  const auto file = golden_dir() / "forward_8x8x8.txt";
  if (std::getenv("TTA_REGENERATE_GOLDEN") != nullptr) {
    std::ofstream out(file);
    out.precision(17);
    out << sum << ' ' << weighted << '\n';
  }
  std::ifstream in(file);
  ASSERT_TRUE(in.good()) << "missing golden file " << file;
  double g_sum = 0.0, g_weighted = 0.0;
  in >> g_sum >> g_weighted;
  EXPECT_NEAR(sum, g_sum, 1e-6 * std::abs(g_sum));
  EXPECT_NEAR(weighted, g_weighted, 1e-6 * std::abs(g_weighted));
}

TEST(Network, ForwardIsDeterministic) {
  Network a = Network::reference(5, 21);
  Network b = Network::reference(5, 21);
  const Tensor x = random_input({2, 1, 8, 8, 8}, 4);
  EXPECT_EQ(a.forward(x, BnMode::Batch).probabilities, b.forward(x, BnMode::Batch).probabilities);
  EXPECT_EQ(a.forward(x, BnMode::Batch).probabilities, a.forward(x, BnMode::Batch).probabilities);
}

TEST(Network, RejectsBadInput) {
  Network net = Network::reference(5, 1);
  EXPECT_THROW(net.forward(Tensor({1, 2, 4, 4, 4}), BnMode::Running), ShapeError);
  EXPECT_THROW(net.forward(Tensor({1, 1, 5, 4, 4}), BnMode::Running), ShapeError);
  EXPECT_THROW(net.forward(Tensor({1, 4, 4, 4}), BnMode::Running), ShapeError);
  Tensor bad({1, 1, 4, 4, 4});
  bad[3] = std::nanf("");
  EXPECT_THROW(net.forward(bad, BnMode::Running), NumericError);
}

TEST(Network, BackwardBeforeForwardIsStateError) {
  Network net = Network::reference(5, 1);
  EXPECT_THROW(net.backward(Tensor({1, 5, 4, 4, 4})), StateError);
}

TEST(Network, TrainingModeUpdatesRunningStatistics) {
  Network net = Network::reference(5, 1);
  const Network before = net;
  net.forward(random_input({2, 1, 4, 4, 4}, 8), BnMode::Batch);
  EXPECT_TRUE(net.same_parameters(before));
  net.forward(random_input({2, 1, 4, 4, 4}, 8), true);
  EXPECT_FALSE(net.same_parameters(before));
  EXPECT_TRUE(net.changed_parameters(before).empty());  // only buffers moved
}

// Running statistics make every parameter influential, so all of them are
// checked, conv biases included.
TEST(NetworkGradients, AllParametersRunningStatistics) {
  Network net = Network::reference(5, 3);
  perturb_running_stats(net, 17);
  const Tensor x = random_input({2, 1, 4, 4, 4}, 1);
  std::vector<std::uint8_t> labels(2 * 64);
  Rng r(2);
  for (auto& l : labels) l = static_cast<std::uint8_t>(r.below(5));
  const LossFunction ce = [&](const SoftPrediction& p) { return cross_entropy_objective(p, labels); };
  harness::GradCheckOptions opt;
  opt.per_parameter = 3;
  const auto report = harness::check_gradients(net, x, BnMode::Running, ce, net.parameter_names(), opt);
  EXPECT_GE(report.entries.size(), 10u);
  for (const auto& e : report.entries) {
    EXPECT_LE(e.rel_error, 1e-2) << e.parameter << "[" << e.index << "] analytic " << e.analytic << " numeric "
                                 << e.numeric;
  }
}

TEST(NetworkGradients, BatchStatisticsTentAndEntropyKl) {
  Network net = Network::reference(5, 4);
  const Tensor x = random_input({2, 1, 4, 4, 4}, 6);
  std::vector<std::string> params;
  const auto invariant = harness::batch_invariant_parameters(net);
  for (const auto& n : net.parameter_names()) {
    if (std::find(invariant.begin(), invariant.end(), n) == invariant.end()) params.push_back(n);
  }
  const ClassRatioPrior prior({0.5, 0.2, 0.1, 0.15, 0.05});
  const LossFunction tent = [](const SoftPrediction& p) { return shannon_entropy_objective(p); };
  const LossFunction ekl = [&](const SoftPrediction& p) { return entropy_kl_objective(p, prior, 1.0); };
  harness::GradCheckOptions opt;
  opt.per_parameter = 2;
  for (const LossFunction* loss : {&tent, &ekl}) {
    const auto report = harness::check_gradients(net, x, BnMode::Batch, *loss, params, opt);
    EXPECT_GE(report.entries.size(), 10u);
    for (const auto& e : report.entries) {
      EXPECT_LE(e.rel_error, 1e-2) << e.parameter << "[" << e.index << "] analytic " << e.analytic << " numeric "
                                   << e.numeric;
    }
  }
}

TEST(NetworkGradients, PreNormalizationBiasHasNoEffectUnderBatchStatistics) {
  Network net = Network::reference(5, 4);
  const Tensor x = random_input({2, 1, 4, 4, 4}, 6);
  const auto p = net.forward(x, BnMode::Batch);
  const auto g = net.backward(shannon_entropy_objective(p).grad);
  for (const auto& name : harness::batch_invariant_parameters(net)) {
    for (float v : g.params.at(name).values()) EXPECT_NEAR(v, 0.0f, 1e-6f) << name;
  }
}

TEST(NetworkGradients, ZeroedChannelHasExactlyZeroGradient) {
  Network net = Network::reference(5, 4);
  net.parameter("dec_bn.bias")[2] = -100.0f;  // ReLU removes channel 2 everywhere
  const Tensor x = random_input({1, 1, 4, 4, 4}, 9);
  const auto p = net.forward(x, BnMode::Batch);
  const auto g = net.backward(shannon_entropy_objective(p).grad);
  EXPECT_EQ(g.params.at("dec_bn.bias")[2], 0.0f);
  EXPECT_EQ(g.params.at("dec_bn.weight")[2], 0.0f);
  EXPECT_NE(g.params.at("dec_bn.bias")[1], 0.0f);
}

TEST(NetworkGradients, ReluPassesNoGradientAtNegativeInput) {
  Network net = Network::reference(5, 4);
  const Tensor x = random_input({1, 1, 4, 4, 4}, 9);
  const auto p = net.forward(x, BnMode::Batch);
  const auto g = net.backward(shannon_entropy_objective(p).grad);
  for (std::size_t li = 0; li < net.num_layers(); ++li) {
    if (net.layer(li).kind != LayerKind::ReLU) continue;
    const Tensor& pre = net.activations()[li - 1];
    const Tensor& grad_pre = g.activations[li - 1];
    std::size_t negatives = 0;
    for (std::size_t i = 0; i < pre.size(); ++i) {
      if (pre[i] < 0.0f) {
        ++negatives;
        EXPECT_EQ(grad_pre[i], 0.0f);
      }
    }
    EXPECT_GT(negatives, 0u);
  }
}

TEST(Network, InferenceBatchNormIsAffinePerChannel) {
  Network net = Network::reference(5, 2);
  perturb_running_stats(net, 3);
  net.forward(random_input({1, 1, 8, 8, 8}, 5), BnMode::Running);
  for (std::size_t li : net.batch_norm_layers()) {
    const Tensor& in = net.activations()[li - 1];
    const Tensor& out = net.activations()[li];
    const Spatial s = spatial_of(in);
    for (std::size_t c = 0; c < in.extent(1); ++c) {
      const std::size_t base = c * s.count();
      const double x0 = in[base], y0 = out[base];
      const double x1 = in[base + 1], y1 = out[base + 1];
      ASSERT_NE(x0, x1);
      const double slope = (y1 - y0) / (x1 - x0);
      for (std::size_t v = 2; v < s.count(); v += 37) {
        const double predicted = y0 + slope * (in[base + v] - x0);
        EXPECT_NEAR(out[base + v], predicted, 1e-4 * (1.0 + std::abs(predicted)));
      }
    }
  }
}
