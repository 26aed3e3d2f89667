#include "tta/harness/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <cstring>

#include "tta/checkpoint.hpp"
#include "tta/error.hpp"
#include "tta/harness/csv.hpp"
#include "tta/harness/gradcheck.hpp"
#include "tta/harness/oracles.hpp"
#include "tta/rng.hpp"
#include "tta/shift.hpp"

namespace tta::harness {
namespace {

using Clock = std::chrono::steady_clock;

constexpr double kRotationMagnitude = 30.0;
constexpr double kGammaMagnitude = 1.2;

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Mean of mean_dice over the rows matching `f`; NaN when none match.
double mean_dice_of(const std::vector<ResultRow>& rows, const RowFilter& f,
                    std::size_t growth_bin = std::numeric_limits<std::size_t>::max()) {
  double s = 0.0;
  std::size_t n = 0;
  for (const ResultRow& r : rows) {
    if (!f.matches(r) || (growth_bin != std::numeric_limits<std::size_t>::max() && r.growth_bin != growth_bin)) {
      continue;
    }
    s += r.mean_dice;
    ++n;
  }
  return n == 0 ? std::nan("") : s / static_cast<double>(n);
}

struct PipelineRun {
  Network source;
  double in_distribution_dice = 0.0;
  Atlas atlas;
  EvalOutput rotation;
  EvalOutput gamma;
  EvalOutput growth;
  std::vector<std::uint8_t> checkpoint_bytes;
  std::map<std::string, std::vector<std::uint8_t>> csv_bytes;
};

PipelineRun run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& dir, const Logger& log) {
  std::filesystem::create_directories(dir);
  TrainResult trained = train_source(cfg, log);
  PipelineRun run{std::move(trained.network), trained.in_distribution_dice, make_atlas(cfg), {}, {}, {}, {}, {}};
  save_checkpoint(run.source, checkpoint_path(dir));
  run.checkpoint_bytes = read_bytes(checkpoint_path(dir));

  EvalRequest rot;
  rot.shift_kinds = {"rotation"};
  rot.magnitudes = {cfg.shifts.rotation};
  rot.methods = {"none", "tent"};
  rot.modes = {BatchMode::SingleSample, BatchMode::FullDataset};
  run.rotation = adapt_eval(cfg, run.source, run.atlas, rot, log);

  EvalRequest gam;
  gam.shift_kinds = {"gamma"};
  gam.magnitudes = {{0.0, kGammaMagnitude}};
  gam.methods = {"none", "histogram_match"};
  gam.modes = {BatchMode::SingleSample};
  run.gamma = adapt_eval(cfg, run.source, run.atlas, gam, log);

  ExperimentConfig gcfg = cfg;
  gcfg.methods = {"none", "tent", "entropy_kl", "layer_inspect"};
  run.growth = growth_curve(gcfg, run.source, run.atlas, log);

  for (const auto& [name, out] : {std::pair<std::string, const EvalOutput*>{"rotation.csv", &run.rotation},
                                  {"gamma.csv", &run.gamma},
                                  {"growth.csv", &run.growth}}) {
    write_results(dir / name, out->rows);
    run.csv_bytes[name] = read_bytes(dir / name);
  }
  return run;
}

CriterionResult gradient_oracle() {
  CriterionResult c{1, "gradient oracle", false, {}};
  const auto start = Clock::now();
  Network net = Network::reference(kPhantomClasses, 101);
  Rng rng(102);
  Tensor x({1, 1, 4, 4, 4});
  for (float& v : x.values()) v = static_cast<float>(rng.uniform());
  // Nontrivial BatchNorm affine parameters so every path carries gradient.
  for (std::size_t l : net.batch_norm_layers()) {
    const std::string name = net.layer(l).name;
    for (float& v : net.parameter(name + ".weight").values()) v = static_cast<float>(rng.uniform(0.5, 1.5));
    for (float& v : net.parameter(name + ".bias").values()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  }
  const std::vector<std::string> all = net.parameter_names();
  const std::vector<std::string> invariant = batch_invariant_parameters(net);
  std::vector<std::string> batch_params;
  for (const std::string& p : all) {
    if (std::find(invariant.begin(), invariant.end(), p) == invariant.end()) batch_params.push_back(p);
  }
  const ClassRatioPrior prior({0.6, 0.1, 0.1, 0.1, 0.1});
  const LossFunction tent = [](const SoftPrediction& p) { return shannon_entropy_objective(p); };
  const LossFunction ekl = [&prior](const SoftPrediction& p) { return entropy_kl_objective(p, prior, 1.0); };

  const GradCheckReport r_tent = check_gradients(net, x, BnMode::Batch, tent, batch_params);
  const GradCheckReport r_ekl = check_gradients(net, x, BnMode::Batch, ekl, batch_params);
  Network running = net;
  const std::vector<Tensor> calib{x};
  running.recalibrate_batch_norm(calib);
  const GradCheckReport r_run = check_gradients(running, x, BnMode::Running, tent, all);

  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  const double tol = 1e-2;
  const std::size_t checked = r_tent.entries.size() + r_ekl.entries.size() + r_run.entries.size();
  c.passed = r_tent.passed(tol) && r_ekl.passed(tol) && r_run.passed(tol) && r_tent.entries.size() >= 10 &&
             r_ekl.entries.size() >= 10 && secs < 60.0;
  c.detail = "worst rel. error tent " + fmt(r_tent.worst_rel_error, 3) + ", entropy_kl " +
             fmt(r_ekl.worst_rel_error, 3) + ", running stats " + fmt(r_run.worst_rel_error, 3) + " over " +
             std::to_string(checked) + " entries, " + fmt(secs, 3) + " s";
  return c;
}

CriterionResult loss_identities() {
  CriterionResult c{2, "loss identities", false, {}};
  Rng rng(7);
  bool ok = true;
  double worst_entropy = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t classes = 2 + static_cast<std::size_t>(rng.below(5));
    const std::size_t voxels = 1 + static_cast<std::size_t>(rng.below(8));
    Tensor probs({1, classes, 1, 1, voxels});
    const double temperature = rng.uniform(0.05, 5.0);
    for (std::size_t v = 0; v < voxels; ++v) {
      std::vector<double> z(classes);
      double s = 0.0;
      for (auto& e : z) s += (e = std::exp(rng.normal() / temperature));
      for (std::size_t k = 0; k < classes; ++k) probs[k * voxels + v] = static_cast<float>(z[k] / s);
    }
    const SoftPrediction p{probs};
    const double h = shannon_entropy(p).total;
    if (!(h >= 0.0 && h <= std::log(static_cast<double>(classes)) + 1e-9)) ok = false;
    worst_entropy = std::max(worst_entropy, h / std::log(static_cast<double>(classes)));

    std::vector<double> tau(classes);
    double ts = 0.0;
    for (auto& t : tau) ts += (t = rng.uniform(0.01, 1.0));
    for (auto& t : tau) t /= ts;
    const ClassRatioPrior prior = ClassRatioPrior::floored(tau);
    const std::vector<double> tau_hat = predicted_class_ratio(p);
    if (kl_divergence(tau_hat, prior) < -1e-12) ok = false;
    if (std::abs(kl_divergence(prior.tau(), prior)) > 1e-12) ok = false;
    if (entropy_kl_loss(p, prior, 0.0).total != shannon_entropy(p).total) ok = false;
  }
  const SoftPrediction two{Tensor({1, 2, 1, 1, 1}, std::vector<float>{0.7f, 0.3f})};
  const double h_direct = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));
  const double h = shannon_entropy(two).total;
  const std::vector<double> half{0.5, 0.5};
  const double kl_direct = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  const double kl = kl_divergence(half, ClassRatioPrior({0.25, 0.75}));
  const bool spots = std::abs(h - h_direct) < 1e-4 && std::abs(h - 0.6109) < 1e-4 &&
                     std::abs(kl - kl_direct) < 1e-4 && std::abs(kl - 0.1438) < 1e-4;
  c.passed = ok && spots;
  c.detail = "1000 random predictions, max H/ln C " + fmt(worst_entropy) + "; H([0.7,0.3]) = " + fmt(h, 6) +
             ", KL example = " + fmt(kl, 6);
  return c;
}

/// Names of parameters that differ bitwise between two networks.
std::vector<std::string> changed_parameters(const Network& a, const Network& b) {
  std::vector<std::string> out;
  for (const std::string& name : a.parameter_names()) {
    const Tensor& x = a.parameter(name);
    const Tensor& y = b.parameter(name);
    if (x.size() != y.size() || !std::equal(x.values().begin(), x.values().end(), y.values().begin(),
                                            [](float u, float v) { return std::memcmp(&u, &v, sizeof u) == 0; })) {
      out.push_back(name);
    }
  }
  return out;
}

bool trajectories_identical(const Network& a, const Network& b) { return changed_parameters(a, b).empty(); }

struct Target {
  Tensor data;
  LabelMap labels;
  ClassRatioPrior prior;
};

Target shifted_target(const ExperimentConfig& cfg, const Atlas& atlas) {
  const std::vector<CohortMember> cohort = make_cohort(cfg, CohortSettings{1, 0.5, 0.5}, 99);
  ShiftSpec spec;
  spec.kind = ShiftKind::Rotation;
  spec.magnitude = kRotationMagnitude;
  spec.exact = true;
  const ShiftedSample s = apply_shift(cohort[0].phantom.volume, cohort[0].phantom.labels, spec);
  return {to_batch(s.volume), s.labels, class_ratio_prior(atlas, growth_bin_of(cohort[0].growth, atlas.growth_bins))};
}

CriterionResult mask_discipline(const Network& source, const Target& t) {
  CriterionResult c{3, "mask discipline", false, {}};
  std::vector<std::string> bn_names;
  for (std::size_t l : source.batch_norm_layers()) {
    bn_names.push_back(source.layer(l).name + ".weight");
    bn_names.push_back(source.layer(l).name + ".bias");
  }
  const auto only_bn = [&](const std::vector<std::string>& changed) {
    for (const std::string& n : changed) {
      if (std::find(bn_names.begin(), bn_names.end(), n) == bn_names.end()) return false;
    }
    return !changed.empty();
  };
  const AdaptedModel tent = adapt_tent(source, t.data, AdaptationConfig::for_strategy(Strategy::Tent));
  const AdaptedModel ekl =
      adapt_entropy_kl(source, t.data, t.prior, AdaptationConfig::for_strategy(Strategy::EntropyKL));
  AdaptationConfig li_cfg = AdaptationConfig::for_strategy(Strategy::LayerInspect);
  li_cfg.m = 1;
  const AdaptedModel li = adapt_layer_inspect(source, t.data, li_cfg);
  const std::vector<std::string> tent_changed = changed_parameters(source, tent.network);
  const std::vector<std::string> ekl_changed = changed_parameters(source, ekl.network);
  const std::vector<std::string> li_changed = changed_parameters(source, li.network);
  bool li_ok = li.selected_layers.size() == 1 && !li_changed.empty();
  for (const std::string& n : li_changed) {
    if (source.layer_of(n) != li.selected_layers.front()) li_ok = false;
  }
  c.passed = only_bn(tent_changed) && only_bn(ekl_changed) && li_ok;
  c.detail = "tent changed " + std::to_string(tent_changed.size()) + " BN tensors, entropy_kl " +
             std::to_string(ekl_changed.size()) + ", layer_inspect m=1 changed " + std::to_string(li_changed.size()) +
             " tensors of layer " +
             (li.selected_layers.empty() ? std::string("-") : source.layer(li.selected_layers.front()).name);
  return c;
}

CriterionResult tent_effectiveness(const ExperimentConfig& cfg, const EvalOutput& rot) {
  CriterionResult c{4, "single-sample TENT beats the base model at rotation 30", false, {}};
  const Comparison cmp = compare(rot.rows, RowFilter{"none", "single_sample", "rotation", true, kRotationMagnitude},
                                 rot.rows, RowFilter{"tent", "single_sample", "rotation", true, kRotationMagnitude});
  c.passed = cmp.mean_b > cmp.mean_a && cmp.test.p_value < 0.05 && cmp.pairs == cfg.evaluation.count;
  c.detail = "base " + fmt(cmp.mean_a) + ", tent " + fmt(cmp.mean_b) + ", t " + fmt(cmp.test.t, 3) + ", p " +
             fmt(cmp.test.p_value, 3) + ", n " + std::to_string(cmp.pairs);
  return c;
}

CriterionResult single_vs_batch(const ExperimentConfig& cfg, const EvalOutput& rot) {
  CriterionResult c{5, "single-sample TENT not worse than full-dataset TENT", true, {}};
  std::ostringstream d;
  double largest = -1.0;
  for (double x : cfg.shifts.rotation) largest = std::max(largest, x);
  for (double x : cfg.shifts.rotation) {
    const double single = mean_dice_of(rot.rows, RowFilter{"tent", "single_sample", "rotation", true, x});
    const double full = mean_dice_of(rot.rows, RowFilter{"tent", "full_dataset", "rotation", true, x});
    if (!(single >= full - 0.02)) c.passed = false;
    if (x == largest && !(single > full)) c.passed = false;
    d << (d.tellp() > 0 ? ", " : "") << fmt(x) << ": " << fmt(single) << " vs " << fmt(full);
  }
  c.detail = "rotation single vs full " + d.str();
  return c;
}

CriterionResult prior_pull(const Network& source, const Target& t) {
  CriterionResult c{6, "EntropyKL prior pull and lambda = 0 equivalence", false, {}};
  const auto l1 = [&](const std::vector<double>& tau_hat) {
    double s = 0.0;
    for (std::size_t k = 0; k < tau_hat.size(); ++k) s += std::abs(tau_hat[k] - t.prior[k]);
    return s;
  };
  AdaptationConfig strong = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  strong.lambda = 1e3;
  strong.num_passes = 50;
  Network probe = source;
  const double before = l1(predicted_class_ratio(probe.forward(t.data, strong.forward_mode())));
  const AdaptedModel pulled = adapt_entropy_kl(source, t.data, t.prior, strong);
  const double after = l1(predicted_class_ratio(pulled.prediction));

  AdaptationConfig zero = AdaptationConfig::for_strategy(Strategy::EntropyKL);
  zero.lambda = 0.0;
  zero.num_passes = 3;
  AdaptationConfig tent_cfg = AdaptationConfig::for_strategy(Strategy::Tent);
  tent_cfg.num_passes = 3;
  const AdaptedModel a = adapt_entropy_kl(source, t.data, t.prior, zero);
  const AdaptedModel b = adapt_tent(source, t.data, tent_cfg);
  bool logs_equal = a.log.size() == b.log.size();
  for (std::size_t i = 0; logs_equal && i < a.log.size(); ++i) logs_equal = a.log[i].entropy == b.log[i].entropy;
  const bool identical = trajectories_identical(a.network, b.network) && logs_equal;
  c.passed = before > 0.0 && after <= 0.5 * before && identical;
  c.detail = "|tau_hat - tau|_1 " + fmt(before) + " -> " + fmt(after) + " (" + fmt(100.0 * (1.0 - after / before), 3) +
             " % reduction); lambda = 0 " + (identical ? "bit-identical to" : "differs from") + " TENT over 3 passes";
  return c;
}

CriterionResult layer_inspect_correctness(const Network& source, const Target& t) {
  CriterionResult c{7, "LayerInspect correctness", false, {}};
  const ToyImportanceCheck toy = toy_importance_check(11);
  const std::size_t mismatches = select_layers_mismatches(100, 12);
  const ImportanceVector target = taylor_importance(source, t.data);
  double norm_t = 0.0, norm_s = 0.0;
  for (double v : target.values) norm_t += v * v;
  for (float v : *source.source_importance()) norm_s += static_cast<double>(v) * v;
  norm_t = std::sqrt(norm_t);
  norm_s = std::sqrt(norm_s);
  c.passed = toy.max_abs_error <= 1e-5 && mismatches == 0 && std::abs(norm_t - 1.0) <= 1e-6 &&
             std::abs(norm_s - 1.0) <= 1e-6;
  c.detail = "toy max error " + fmt(toy.max_abs_error, 3) + ", select_layers mismatches " + std::to_string(mismatches) +
             "/100, norms target " + fmt(norm_t, 10) + " source " + fmt(norm_s, 8);
  return c;
}

CriterionResult gamma_recovery(const EvalOutput& gam) {
  CriterionResult c{8, "histogram matching recovers log gamma 1.2", false, {}};
  const double clean = mean_dice_of(gam.rows, RowFilter{"none", "single_sample", "gamma", true, 0.0});
  const double shifted = mean_dice_of(gam.rows, RowFilter{"none", "single_sample", "gamma", true, kGammaMagnitude});
  const double matched =
      mean_dice_of(gam.rows, RowFilter{"histogram_match", "single_sample", "gamma", true, kGammaMagnitude});
  c.passed = matched >= clean - 0.05;
  c.detail = "unshifted " + fmt(clean) + ", shifted " + fmt(shifted) + ", matched " + fmt(matched);
  return c;
}

CriterionResult growth_shape(const ExperimentConfig& cfg, const EvalOutput& growth) {
  CriterionResult c{9, "growth curve shape", true, {}};
  const std::size_t bins = cfg.growth.bins;
  const std::size_t centre = bins / 2;
  std::vector<double> base(bins);
  for (std::size_t b = 0; b < bins; ++b) base[b] = mean_dice_of(growth.rows, RowFilter{"none", "", "", false, 0.0}, b);
  if (!(base.front() < base[centre] && base.back() < base[centre])) c.passed = false;
  std::ostringstream d;
  d << "base";
  for (double v : base) d << " " << fmt(v, 3);
  for (const std::string method : {"tent", "entropy_kl", "layer_inspect"}) {
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < bins; ++b) {
      const double diff = mean_dice_of(growth.rows, RowFilter{method, "", "", false, 0.0}, b) - base[b];
      worst = std::min(worst, diff);
      if (!(diff >= -0.02)) c.passed = false;
    }
    d << "; " << method << " worst diff " << fmt(worst, 3);
  }
  c.detail = d.str();
  return c;
}

CriterionResult determinism(const PipelineRun& first, const PipelineRun* second, const std::filesystem::path& dir,
                            double minutes, double budget) {
  CriterionResult c{10, "determinism and file round trips", true, {}};
  std::ostringstream d;
  if (second != nullptr) {
    bool same = first.checkpoint_bytes == second->checkpoint_bytes;
    for (const auto& [name, bytes] : first.csv_bytes) {
      const auto it = second->csv_bytes.find(name);
      same = same && it != second->csv_bytes.end() && it->second == bytes;
    }
    if (!same) c.passed = false;
    d << "repeat run " << (same ? "byte-identical" : "differs");
  } else {
    c.passed = false;
    d << "repeat run skipped";
  }
  const Network loaded = load_checkpoint(checkpoint_path(dir));
  const bool ckpt = serialize_checkpoint(loaded) == first.checkpoint_bytes && loaded.same_parameters(first.source);
  const Phantom p = generate_phantom(PhantomSpec{});
  save_volume(p.volume, dir / "roundtrip.tvol");
  save_label_map(p.labels, dir / "roundtrip_labels.tvol");
  const bool vol = load_volume(dir / "roundtrip.tvol") == p.volume &&
                   load_label_map(dir / "roundtrip_labels.tvol") == p.labels;
  if (!ckpt || !vol) c.passed = false;
  if (minutes >= budget) c.passed = false;
  d << "; checkpoint round trip " << (ckpt ? "exact" : "differs") << "; volume round trip "
    << (vol ? "exact" : "differs") << "; " << fmt(minutes, 3) << " min of " << fmt(budget, 3) << " min budget";
  c.detail = d.str();
  return c;
}

}  // namespace

bool AcceptanceReport::all_passed() const {
  return !criteria.empty() && std::all_of(criteria.begin(), criteria.end(), [](const auto& c) { return c.passed; });
}

std::string AcceptanceReport::format() const {
  std::ostringstream s;
  for (const CriterionResult& c : criteria) {
    s << "criterion " << c.id << ": " << (c.passed ? "PASS" : "FAIL") << " " << c.name << " (" << c.detail << ")\n";
  }
  return s.str();
}

AcceptanceReport run_acceptance(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const AcceptanceOptions& opt, const Logger& log) {
  cfg.validate();
  const auto start = Clock::now();
  AcceptanceReport report;
  report.criteria.push_back(gradient_oracle());
  say(log, report.criteria.back().detail);
  report.criteria.push_back(loss_identities());

  say(log, "pipeline run 1");
  const PipelineRun first = run_pipeline(cfg, out_dir, log);
  say(log, "in-distribution mean Dice " + fmt(first.in_distribution_dice));
  const Target target = shifted_target(cfg, first.atlas);
  report.criteria.push_back(mask_discipline(first.source, target));
  report.criteria.push_back(tent_effectiveness(cfg, first.rotation));
  report.criteria.push_back(single_vs_batch(cfg, first.rotation));
  report.criteria.push_back(prior_pull(first.source, target));
  report.criteria.push_back(layer_inspect_correctness(first.source, target));
  report.criteria.push_back(gamma_recovery(first.gamma));
  report.criteria.push_back(growth_shape(cfg, first.growth));

  std::optional<PipelineRun> second;
  if (opt.repeat_run) {
    say(log, "pipeline run 2");
    second = run_pipeline(cfg, out_dir / "repeat", log);
  }
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  report.criteria.push_back(determinism(first, second ? &*second : nullptr, out_dir, report.wall_seconds / 60.0,
                                        opt.budget_minutes));
  std::ofstream(out_dir / "report.txt") << report.format();
  return report;
}

}  // namespace tta::harness
