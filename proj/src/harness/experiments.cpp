#include "tta/harness/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "tta/adam.hpp"
#include "tta/adaptation.hpp"
#include "tta/error.hpp"
#include "tta/losses.hpp"
#include "tta/rng.hpp"
#include "tta/shift.hpp"

namespace tta::harness {
namespace {

enum Tag : std::uint64_t {
  kTagSource = 1,
  kTagEvaluation = 2,
  kTagAtlas = 3,
  kTagGrowth = 4,
  kTagInit = 5,
  kTagTraining = 6,
  kTagShift = 7,
  kTagImportance = 8,
};

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

PhantomSpec phantom_spec(const ExperimentConfig& cfg, double growth, std::uint64_t seed) {
  PhantomSpec s;
  s.dims = cfg.phantom.grid;
  s.voxel_size_mm = cfg.phantom.voxel_size_mm;
  s.growth = growth;
  s.noise = cfg.phantom.noise;
  s.bias = cfg.phantom.bias;
  s.seed = seed;
  return s;
}

ShiftKind kind_of(const std::string& name) { return parse_shift_kind(name); }

std::uint64_t kind_index(const std::string& name) { return static_cast<std::uint64_t>(kind_of(name)); }

// Sub-volume of extent `side` starting at (d, h, w).
Phantom crop(const Volume& v, const LabelMap& l, std::size_t d0, std::size_t h0, std::size_t w0, std::size_t side) {
  Phantom out{Volume({side, side, side}, v.voxel_size_mm), LabelMap({side, side, side}, l.voxel_size_mm)};
  for (std::size_t d = 0; d < side; ++d) {
    for (std::size_t h = 0; h < side; ++h) {
      const std::size_t src = v.index(d0 + d, h0 + h, w0);
      const std::size_t dst = out.volume.index(d, h, 0);
      std::copy_n(v.values.begin() + static_cast<std::ptrdiff_t>(src), side,
                  out.volume.values.begin() + static_cast<std::ptrdiff_t>(dst));
      std::copy_n(l.values.begin() + static_cast<std::ptrdiff_t>(src), side,
                  out.labels.values.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  return out;
}

struct Shifted {
  std::size_t id = 0;
  double growth = 0.5;
  Volume volume;
  LabelMap labels;
};

std::vector<Shifted> shift_cohort(const ExperimentConfig& cfg, const std::vector<CohortMember>& cohort,
                                  const std::string& kind, double magnitude) {
  std::vector<Shifted> out;
  out.reserve(cohort.size());
  const std::uint64_t kind_seed = derive_seed(derive_seed(cfg.seed, kTagShift), kind_index(kind));
  for (const CohortMember& m : cohort) {
    ShiftSpec spec;
    spec.kind = kind_of(kind);
    spec.magnitude = magnitude;
    spec.seed = derive_seed(kind_seed, m.id);
    ShiftedSample s = apply_shift(m.phantom.volume, m.phantom.labels, spec);
    out.push_back({m.id, m.growth, std::move(s.volume), std::move(s.labels)});
  }
  return out;
}

std::vector<Shifted> unshifted(const std::vector<CohortMember>& cohort) {
  std::vector<Shifted> out;
  for (const CohortMember& m : cohort) out.push_back({m.id, m.growth, m.phantom.volume, m.phantom.labels});
  return out;
}

struct MethodOutcome {
  std::vector<std::vector<std::uint8_t>> labels;
  std::vector<double> entropy_pre;
  std::vector<double> entropy_post;
  double wall_ms_per_sample = 0.0;
};

MethodOutcome run_base(const Network& source, const std::vector<Shifted>& data, const Volume* match_reference) {
  MethodOutcome o;
  const auto start = Clock::now();
  Network net = source;
  for (const Shifted& s : data) {
    const double pre = shannon_entropy(net.forward(to_batch(s.volume), BnMode::Running)).total;
    SoftPrediction pred;
    if (match_reference != nullptr) {
      pred = net.forward(to_batch(histogram_match(s.volume, *match_reference)), BnMode::Running);
    } else {
      pred = net.forward(to_batch(s.volume), BnMode::Running);
    }
    o.entropy_pre.push_back(pre);
    o.entropy_post.push_back(shannon_entropy(pred).total);
    o.labels.push_back(pred.argmax(0));
  }
  o.wall_ms_per_sample = elapsed_ms(start) / static_cast<double>(std::max<std::size_t>(1, data.size()));
  return o;
}

MethodOutcome run_method(const ExperimentConfig& cfg, const Network& source, const Atlas& atlas,
                         const std::vector<Shifted>& data, const std::string& method, AdaptationConfig acfg) {
  if (method == "none") return run_base(source, data, nullptr);
  if (method == "histogram_match") return run_base(source, data, &atlas.mean_intensity);

  std::vector<Volume> volumes;
  std::vector<ClassRatioPrior> priors;
  for (const Shifted& s : data) {
    volumes.push_back(s.volume);
    priors.push_back(class_ratio_prior(atlas, growth_bin_of(s.growth, atlas.growth_bins)));
  }
  const auto start = Clock::now();
  const RunResult r = run_adaptation(source, volumes, acfg, priors, cfg.threads);
  MethodOutcome o;
  o.wall_ms_per_sample = elapsed_ms(start) / static_cast<double>(std::max<std::size_t>(1, data.size()));
  for (const SampleOutcome& s : r.samples) {
    o.labels.push_back(s.labels);
    o.entropy_pre.push_back(s.entropy_before);
    o.entropy_post.push_back(s.entropy_after);
  }
  return o;
}

ResultRow make_row(const std::string& method, BatchMode mode, const std::string& shift, double magnitude,
                   const Shifted& s, const std::vector<std::uint8_t>& labels, double pre, double post,
                   std::size_t growth_bins) {
  ResultRow r;
  r.method = method;
  r.mode = to_string(mode);
  r.shift = shift;
  r.magnitude = magnitude;
  r.growth = s.growth;
  r.growth_bin = growth_bin_of(s.growth, growth_bins);
  r.sample = s.id;
  r.class_dice = foreground_dice(labels, s.labels.values, kPhantomClasses);
  r.mean_dice = mean_dice(labels, s.labels.values, kPhantomClasses);
  r.entropy_pre = pre;
  r.entropy_post = post;
  return r;
}

void append_rows(EvalOutput& out, const MethodOutcome& o, const std::string& method, BatchMode mode,
                 const std::string& shift, double magnitude, const std::vector<Shifted>& data,
                 std::size_t growth_bins, const std::string& axis = "-", double param = 0.0) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    ResultRow r = make_row(method, mode, shift, magnitude, data[i], o.labels[i], o.entropy_pre[i], o.entropy_post[i],
                           growth_bins);
    r.axis = axis;
    r.param = param;
    out.rows.push_back(std::move(r));
    out.timings.push_back({method, to_string(mode), shift, magnitude, axis, param, data[i].id, o.wall_ms_per_sample});
  }
}

double mean_of(const std::vector<ResultRow>& rows, std::size_t first) {
  double s = 0.0;
  for (std::size_t i = first; i < rows.size(); ++i) s += rows[i].mean_dice;
  return rows.size() > first ? s / static_cast<double>(rows.size() - first) : 0.0;
}

}  // namespace

std::vector<CohortMember> make_cohort(const ExperimentConfig& cfg, const CohortSettings& cohort, std::uint64_t tag) {
  const std::uint64_t cohort_seed = derive_seed(cfg.seed, tag);
  std::vector<CohortMember> out;
  out.reserve(cohort.count);
  for (std::size_t i = 0; i < cohort.count; ++i) {
    const std::uint64_t s = derive_seed(cohort_seed, i);
    Rng r(s);
    const double g = cohort.growth_min + (cohort.growth_max - cohort.growth_min) * r.uniform();
    out.push_back({i, g, generate_phantom(phantom_spec(cfg, g, derive_seed(s, 1)))});
  }
  return out;
}

std::vector<CohortMember> make_growth_cohort(const ExperimentConfig& cfg, std::uint64_t tag) {
  const std::uint64_t cohort_seed = derive_seed(cfg.seed, tag);
  std::vector<CohortMember> out;
  const std::size_t bins = cfg.growth.bins;
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t j = 0; j < cfg.growth.per_bin; ++j) {
      const std::size_t id = b * cfg.growth.per_bin + j;
      const std::uint64_t s = derive_seed(cohort_seed, id);
      Rng r(s);
      const double g = std::min(1.0, (static_cast<double>(b) + r.uniform()) / static_cast<double>(bins));
      out.push_back({id, g, generate_phantom(phantom_spec(cfg, g, derive_seed(s, 1)))});
    }
  }
  return out;
}

Atlas make_atlas(const ExperimentConfig& cfg) {
  const std::uint64_t cohort_seed = derive_seed(cfg.seed, kTagAtlas);
  std::vector<Phantom> phantoms;
  std::vector<double> growths;
  const std::size_t n = cfg.atlas.cohort;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    phantoms.push_back(generate_phantom(phantom_spec(cfg, g, derive_seed(cohort_seed, i))));
    growths.push_back(g);
  }
  return build_atlas(phantoms, growths, cfg.atlas.growth_bins);
}

TrainResult train_source(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const SourceSettings& st = cfg.source;
  const std::vector<CohortMember> cohort = make_cohort(cfg, st.cohort, kTagSource);
  say(log, "source cohort: " + std::to_string(cohort.size()) + " phantoms");

  TrainResult result{Network::reference(kPhantomClasses, derive_seed(cfg.seed, kTagInit)), 0.0, {}};
  Network& net = result.network;
  const ParameterMask mask = ParameterMask::all(net);
  AdamState adam;
  Rng rng(derive_seed(cfg.seed, kTagTraining));
  const Dims grid = cfg.phantom.grid;
  const auto start = Clock::now();
  double smoothed = 0.0;
  std::vector<Tensor> whole;
  for (const CohortMember& m : cohort) whole.push_back(to_batch(m.phantom.volume));

  // Inverse square-root class frequency weights; background dominates the voxel count.
  std::vector<double> class_weights(kPhantomClasses, 0.0);
  for (const CohortMember& m : cohort) {
    for (std::uint8_t y : m.phantom.labels.values) class_weights[y] += 1.0;
  }
  for (double& w : class_weights) w = 1.0 / std::sqrt(std::max(w, 1.0));

  // BatchNorm learns with the statistics of each training batch, as used at
  // test time when adapting one volume. Each augmentation step is applied
  // with probability augment_probability so unaugmented volumes stay in the
  // training distribution.
  const std::size_t side = st.crop;
  const auto maybe = [&](ShiftKind kind, double range) {
    const bool on = rng.uniform() < st.augment_probability;
    return ShiftSpec{kind, on ? range : 0.0, false, rng.next_u64(), {}};
  };
  for (std::size_t step = 0; step < st.steps; ++step) {
    std::vector<Volume> volumes;
    std::vector<std::uint8_t> labels;
    for (std::size_t b = 0; b < st.batch_size; ++b) {
      const CohortMember& m = cohort[rng.below(cohort.size())];
      ShiftSpec aug;
      aug.kind = ShiftKind::Compose;
      aug.steps.push_back(maybe(ShiftKind::Rotation, st.augmentation.rotation));
      aug.steps.push_back(maybe(ShiftKind::Scaling, st.augmentation.scaling));
      aug.steps.push_back(maybe(ShiftKind::GaussianSmooth, st.augmentation.smoothing));
      aug.steps.push_back(maybe(ShiftKind::GammaCorrection, st.augmentation.gamma));
      ShiftedSample s = apply_shift(m.phantom.volume, m.phantom.labels, aug);
      if (side == 0) {
        volumes.push_back(std::move(s.volume));
        labels.insert(labels.end(), s.labels.values.begin(), s.labels.values.end());
        continue;
      }
      const std::size_t d0 = rng.below(grid.d - side + 1);
      const std::size_t h0 = rng.below(grid.h - side + 1);
      const std::size_t w0 = rng.below(grid.w - side + 1);
      Phantom patch = crop(s.volume, s.labels, d0, h0, w0, side);
      volumes.push_back(std::move(patch.volume));
      labels.insert(labels.end(), patch.labels.values.begin(), patch.labels.values.end());
    }
    const SoftPrediction pred = net.forward(to_batch(volumes), BnMode::BatchUpdate);
    const Objective obj = cross_entropy_objective(pred, labels, class_weights);
    if (!std::isfinite(obj.value.total)) {
      throw NumericError("source training diverged at step " + std::to_string(step) + " (loss " +
                         std::to_string(obj.value.total) + ")");
    }
    const Gradients grads = net.backward(obj.grad);
    const double progress = static_cast<double>(step) / static_cast<double>(st.steps);
    const double lr = st.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * progress)));
    adam_step(net, grads, mask, adam, lr);
    result.loss_log.push_back(obj.value.total);
    smoothed = step == 0 ? obj.value.total : 0.95 * smoothed + 0.05 * obj.value.total;
    if ((step + 1) % 100 == 0 || step + 1 == st.steps) {
      std::ostringstream msg;
      msg << "step " << step + 1 << "/" << st.steps << " loss " << smoothed << " ("
          << static_cast<long>(elapsed_ms(start) / 1000.0) << " s)";
      say(log, msg.str());
    }
  }
  // Running statistics become the average per-volume statistics of the cohort.
  net.clear_cache();
  net.recalibrate_batch_norm(whole);

  // Source importance from a deterministic subset of the source cohort.
  std::vector<Volume> subset;
  for (std::size_t i = 0; i < std::min(st.importance_samples, cohort.size()); ++i) {
    subset.push_back(cohort[i].phantom.volume);
  }
  cache_source_importance(net, to_batch(subset));

  const std::vector<CohortMember> eval = make_cohort(cfg, cfg.evaluation, kTagEvaluation);
  result.in_distribution_dice = evaluate_base(net, eval);
  say(log, "in-distribution mean Dice " + format_number(result.in_distribution_dice));
  return result;
}

double evaluate_base(const Network& net, const std::vector<CohortMember>& cohort) {
  const MethodOutcome o = run_base(net, unshifted(cohort), nullptr);
  double s = 0.0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    s += mean_dice(o.labels[i], cohort[i].phantom.labels.values, kPhantomClasses);
  }
  return cohort.empty() ? 0.0 : s / static_cast<double>(cohort.size());
}

EvalRequest default_eval_request(const ExperimentConfig& cfg) {
  EvalRequest r;
  r.shift_kinds = cfg.shift_kinds;
  for (const std::string& k : cfg.shift_kinds) r.magnitudes.push_back(cfg.shifts.of(k));
  r.methods = cfg.methods;
  r.modes = cfg.modes;
  return r;
}

EvalOutput adapt_eval(const ExperimentConfig& cfg, const Network& source, const Atlas& atlas,
                      const EvalRequest& request, const Logger& log) {
  const std::vector<CohortMember> cohort = make_cohort(cfg, cfg.evaluation, kTagEvaluation);
  EvalOutput out;
  for (std::size_t ki = 0; ki < request.shift_kinds.size(); ++ki) {
    const std::string& kind = request.shift_kinds[ki];
    const std::vector<double>& grid =
        ki < request.magnitudes.size() && !request.magnitudes[ki].empty() ? request.magnitudes[ki] : cfg.shifts.of(kind);
    for (double x : grid) {
      const std::vector<Shifted> data = shift_cohort(cfg, cohort, kind, x);
      for (const std::string& method : request.methods) {
        const bool adaptive = method != "none" && method != "histogram_match";
        MethodOutcome shared;
        if (!adaptive) shared = run_method(cfg, source, atlas, data, method, {});
        for (BatchMode mode : request.modes) {
          const std::size_t first = out.rows.size();
          if (adaptive) {
            AdaptationConfig acfg = cfg.adaptation_for(method);
            acfg.batch_mode = mode;
            append_rows(out, run_method(cfg, source, atlas, data, method, acfg), method, mode, kind, x, data,
                        atlas.growth_bins);
          } else {
            append_rows(out, shared, method, mode, kind, x, data, atlas.growth_bins);
          }
          say(log, kind + " " + format_number(x) + " " + method + " (" + to_string(mode) +
                       "): mean Dice " + format_number(mean_of(out.rows, first)));
        }
      }
    }
  }
  sort_rows(out.rows);
  return out;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "lambda") return SweepAxis::Lambda;
  if (s == "m") return SweepAxis::M;
  if (s == "lr") return SweepAxis::LearningRate;
  throw ConfigError("unknown sweep axis '" + s + "' (lambda, m, lr)");
}

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::M: return "m";
    case SweepAxis::LearningRate: return "lr";
  }
  return "?";
}

EvalOutput sweep(const ExperimentConfig& cfg, const Network& source, const Atlas& atlas, SweepAxis axis,
                 const Logger& log) {
  const std::vector<CohortMember> cohort = make_cohort(cfg, cfg.evaluation, kTagEvaluation);
  std::vector<double> values;
  switch (axis) {
    case SweepAxis::Lambda: values = cfg.sweep.lambda; break;
    case SweepAxis::LearningRate: values = cfg.sweep.lr; break;
    case SweepAxis::M:
      for (std::size_t m : cfg.sweep.m) values.push_back(static_cast<double>(m));
      break;
  }
  const std::string method = axis == SweepAxis::Lambda ? "entropy_kl" : "layer_inspect";
  EvalOutput out;
  for (double x : cfg.sweep.rotations) {
    const std::vector<Shifted> data = shift_cohort(cfg, cohort, "rotation", x);
    for (double v : values) {
      AdaptationConfig acfg = cfg.adaptation_for(method);
      acfg.batch_mode = BatchMode::SingleSample;
      switch (axis) {
        case SweepAxis::Lambda: acfg.lambda = v; break;
        case SweepAxis::LearningRate: acfg.learning_rate = v; break;
        case SweepAxis::M: acfg.m = static_cast<std::size_t>(v); break;
      }
      const std::size_t first = out.rows.size();
      append_rows(out, run_method(cfg, source, atlas, data, method, acfg), method, BatchMode::SingleSample,
                  "rotation", x, data, atlas.growth_bins, to_string(axis), v);
      say(log, std::string("rotation ") + format_number(x) + " " + to_string(axis) + "=" + format_number(v) +
                   ": mean Dice " + format_number(mean_of(out.rows, first)));
    }
  }
  sort_rows(out.rows);
  return out;
}

EvalOutput growth_curve(const ExperimentConfig& cfg, const Network& source, const Atlas& atlas,
                        const Logger& log) {
  const std::vector<CohortMember> cohort = make_growth_cohort(cfg, kTagGrowth);
  EvalOutput out;
  for (std::size_t b = 0; b < cfg.growth.bins; ++b) {
    std::vector<Shifted> data;
    for (const CohortMember& m : cohort) {
      if (m.id / cfg.growth.per_bin == b) data.push_back({m.id, m.growth, m.phantom.volume, m.phantom.labels});
    }
    for (const std::string& method : cfg.methods) {
      AdaptationConfig acfg;
      const bool adaptive = method != "none" && method != "histogram_match";
      if (adaptive) {
        acfg = cfg.adaptation_for(method);
        acfg.batch_mode = BatchMode::SingleSample;
      }
      const MethodOutcome o = run_method(cfg, source, atlas, data, method, acfg);
      const std::size_t first = out.rows.size();
      append_rows(out, o, method, BatchMode::SingleSample, "none", 0.0, data, cfg.growth.bins);
      say(log, "growth bin " + std::to_string(b) + " " + method + ": mean Dice " +
                   format_number(mean_of(out.rows, first)));
    }
  }
  sort_rows(out.rows);
  return out;
}

bool RowFilter::matches(const ResultRow& r) const {
  return (method.empty() || r.method == method) && (mode.empty() || r.mode == mode) &&
         (shift.empty() || r.shift == shift) && (!has_magnitude || r.magnitude == magnitude);
}

Comparison compare(const std::vector<ResultRow>& a, const RowFilter& fa, const std::vector<ResultRow>& b,
                   const RowFilter& fb) {
  using Key = std::tuple<std::string, double, std::string, double, std::size_t, std::size_t>;
  const auto collect = [](const std::vector<ResultRow>& rows, const RowFilter& f, const char* side) {
    std::map<Key, double> m;
    for (const ResultRow& r : rows) {
      if (!f.matches(r)) continue;
      const Key k{r.shift, r.magnitude, r.axis, r.param, r.growth_bin, r.sample};
      if (!m.emplace(k, r.mean_dice).second) {
        throw ConfigError(std::string("several rows of ") + side + " share shift " + r.shift + ", magnitude " +
                          format_number(r.magnitude) + ", sample " + std::to_string(r.sample) +
                          "; narrow the selection with method/mode filters");
      }
    }
    if (m.empty()) throw ConfigError(std::string("no rows of ") + side + " match the filter");
    return m;
  };
  const std::map<Key, double> ma = collect(a, fa, "A");
  const std::map<Key, double> mb = collect(b, fb, "B");
  if (ma.size() != mb.size()) throw ConfigError("the two selections contain different sample sets");
  std::vector<double> va, vb;
  for (const auto& [k, v] : ma) {
    const auto it = mb.find(k);
    if (it == mb.end()) throw ConfigError("sample " + std::to_string(std::get<5>(k)) + " is missing from B");
    va.push_back(v);
    vb.push_back(it->second);
  }
  Comparison c;
  c.test = paired_t_test(va, vb);
  c.pairs = va.size();
  c.mean_a = mean(va);
  c.mean_b = mean(vb);
  return c;
}

std::string format_comparison(const Comparison& c, double alpha) {
  std::ostringstream s;
  s << "pairs: " << c.pairs << "\n"
    << "mean Dice A: " << format_number(c.mean_a) << "\n"
    << "mean Dice B: " << format_number(c.mean_b) << "\n"
    << "mean difference (B - A): " << format_number(c.test.mean_difference) << "\n"
    << "t: " << format_number(c.test.t) << " (df " << (c.pairs > 0 ? c.pairs - 1 : 0) << ")\n"
    << "p (two-sided): " << format_number(c.test.p_value) << "\n"
    << "zero variance: " << (c.test.zero_variance ? "yes" : "no") << "\n"
    << "significant at " << format_number(alpha) << ": " << (c.test.significant(alpha) ? "yes" : "no") << "\n";
  return s.str();
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir) { return out_dir / "source.ttck"; }

}  // namespace tta::harness
