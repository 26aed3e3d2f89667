#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tta/adaptation.hpp"
#include "tta/error.hpp"
#include "tta/harness/config.hpp"
#include "tta/harness/stats.hpp"
#include "tta/losses.hpp"
#include "tta/phantom.hpp"
#include "tta/shift.hpp"

namespace py = pybind11;
using namespace tta;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::buffer_info& info) {
  if (info.ndim != 3) throw ShapeError("expected a 3-D array");
  return {static_cast<std::size_t>(info.shape[0]), static_cast<std::size_t>(info.shape[1]),
          static_cast<std::size_t>(info.shape[2])};
}

Volume to_volume(const FloatArray& a) {
  const py::buffer_info info = a.request();
  Volume v(dims_of(info));
  std::copy_n(static_cast<const float*>(info.ptr), v.size(), v.values.begin());
  return v;
}

LabelMap to_labels(const LabelArray& a) {
  const py::buffer_info info = a.request();
  LabelMap l(dims_of(info));
  std::copy_n(static_cast<const std::uint8_t*>(info.ptr), l.size(), l.values.begin());
  return l;
}

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
  py::array_t<T> out({g.dims.d, g.dims.h, g.dims.w});
  std::copy(g.values.begin(), g.values.end(), out.mutable_data());
  return out;
}

/// Probabilities of shape (batch, C, D, H, W).
SoftPrediction to_prediction(const FloatArray& a) {
  const py::buffer_info info = a.request();
  if (info.ndim != 5) throw ShapeError("expected probabilities of shape (batch, C, D, H, W)");
  Shape shape;
  for (auto e : info.shape) shape.push_back(static_cast<std::size_t>(e));
  Tensor t(shape);
  std::copy_n(static_cast<const float*>(info.ptr), t.size(), t.data());
  return SoftPrediction{std::move(t)};
}

py::array_t<float> prediction_array(const SoftPrediction& p) {
  std::vector<py::ssize_t> shape(p.probabilities.shape().begin(), p.probabilities.shape().end());
  py::array_t<float> out(shape);
  std::copy_n(p.probabilities.data(), p.probabilities.size(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Test-time adaptation of a 3-D segmentation network on synthetic phantoms";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);

  py::class_<Phantom>(m, "Phantom")
      .def_property_readonly("volume", [](const Phantom& p) { return to_array(p.volume); })
      .def_property_readonly("labels", [](const Phantom& p) { return to_array(p.labels); });

  m.def(
      "generate_phantom",
      [](std::uint64_t seed, double growth, std::size_t side, double noise, double bias) {
        PhantomSpec s;
        s.dims = {side, side, side};
        s.seed = seed;
        s.growth = growth;
        s.noise = noise;
        s.bias = bias;
        return generate_phantom(s);
      },
      py::arg("seed"), py::arg("growth") = 0.5, py::arg("side") = 64, py::arg("noise") = PhantomSpec{}.noise,
      py::arg("bias") = PhantomSpec{}.bias, "Synthetic labelled phantom with 4 foreground structures.");

  m.def(
      "apply_shift",
      [](const FloatArray& volume, const LabelArray& labels, const std::string& kind, double magnitude,
         std::uint64_t seed, bool exact) {
        ShiftSpec spec;
        spec.kind = parse_shift_kind(kind);
        spec.magnitude = magnitude;
        spec.seed = seed;
        spec.exact = exact;
        const ShiftedSample s = apply_shift(to_volume(volume), to_labels(labels), spec);
        return py::make_tuple(to_array(s.volume), to_array(s.labels), s.applied);
      },
      py::arg("volume"), py::arg("labels"), py::arg("kind"), py::arg("magnitude"), py::arg("seed") = 0,
      py::arg("exact") = false, "Returns (volume, labels, applied parameters).");

  m.def(
      "histogram_match",
      [](const FloatArray& target, const FloatArray& reference, std::size_t bins) {
        return to_array(histogram_match(to_volume(target), to_volume(reference), bins));
      },
      py::arg("target"), py::arg("reference"), py::arg("bins") = 1024);

  m.def(
      "shannon_entropy", [](const FloatArray& probs) { return shannon_entropy(to_prediction(probs)).total; },
      py::arg("probabilities"), "Voxel-mean Shannon entropy (natural log).");

  m.def(
      "kl_divergence",
      [](const std::vector<double>& tau_hat, const std::vector<double>& tau) {
        return kl_divergence(tau_hat, ClassRatioPrior(tau));
      },
      py::arg("tau_hat"), py::arg("tau"));

  m.def(
      "select_layers",
      [](const std::vector<double>& source, const std::vector<double>& target, std::size_t count) {
        return select_layers(ImportanceVector{source, Provenance::Source}, ImportanceVector{target, Provenance::Target},
                             count);
      },
      py::arg("source"), py::arg("target"), py::arg("m"));

  m.def(
      "paired_t_test",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const harness::PairedTTest r = harness::paired_t_test(a, b);
        py::dict d;
        d["n"] = r.n;
        d["mean_difference"] = r.mean_difference;
        d["sd_difference"] = r.sd_difference;
        d["t"] = r.t;
        d["p_value"] = r.p_value;
        d["zero_variance"] = r.zero_variance;
        return d;
      },
      py::arg("a"), py::arg("b"), "Two-sided paired t-test of b - a.");

  m.def("dump_default_config", [] { return harness::dump_config(harness::ExperimentConfig{}); });

  py::class_<Network>(m, "Network")
      .def_static("reference", &Network::reference, py::arg("num_classes") = kPhantomClasses, py::arg("seed") = 0)
      .def_property_readonly("parameter_names", &Network::parameter_names)
      .def(
          "parameter",
          [](const Network& n, const std::string& name) {
            const Tensor& t = n.parameter(name);
            return std::vector<float>(t.values().begin(), t.values().end());
          },
          py::arg("name"))
      .def(
          "predict",
          [](Network& n, const FloatArray& volume, bool batch_stats) {
            return prediction_array(
                n.forward(to_batch(to_volume(volume)), batch_stats ? BnMode::Batch : BnMode::Running));
          },
          py::arg("volume"), py::arg("batch_stats") = false, "Softmax probabilities of shape (1, C, D, H, W).");

  m.def(
      "adapt",
      [](const Network& source, const FloatArray& volume, const std::string& strategy, double lr, int passes) {
        AdaptationConfig cfg = AdaptationConfig::for_strategy(parse_strategy(strategy));
        if (lr > 0.0) cfg.learning_rate = lr;
        cfg.num_passes = passes;
        const Tensor x = to_batch(to_volume(volume));
        AdaptedModel a;
        if (cfg.strategy == Strategy::Tent) {
          a = adapt_tent(source, x, cfg);
        } else if (cfg.strategy == Strategy::LayerInspect) {
          a = adapt_layer_inspect(source, x, cfg);
        } else {
          throw ConfigError("adapt supports tent and layer_inspect; entropy_kl needs an atlas prior");
        }
        return py::make_tuple(a.network, a.entropy_before, a.entropy_after);
      },
      py::arg("source"), py::arg("volume"), py::arg("strategy") = "tent", py::arg("lr") = 0.0, py::arg("passes") = 1,
      "Returns (adapted network, entropy before, entropy after).");
}
