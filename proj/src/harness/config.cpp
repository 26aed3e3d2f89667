#include "tta/harness/config.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "tta/error.hpp"

namespace tta::harness {
namespace {

using nlohmann::json;

const std::set<std::string> kMethods{"none", "histogram_match", "tent", "entropy_kl", "layer_inspect"};
const std::set<std::string> kShiftKinds{"rotation", "scaling", "smoothing", "gamma"};

// Visits the members of an object, rejecting keys outside `allowed`.
void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void read_cohort(const json& j, CohortSettings& c, const std::string& where) {
  check_keys(j, where, {"count", "growth_min", "growth_max"});
  read(j, "count", c.count, where);
  read(j, "growth_min", c.growth_min, where);
  read(j, "growth_max", c.growth_max, where);
}

void read_ranges(const json& j, ShiftRanges& r, const std::string& where) {
  check_keys(j, where, {"rotation", "scaling", "smoothing", "gamma"});
  read(j, "rotation", r.rotation, where);
  read(j, "scaling", r.scaling, where);
  read(j, "smoothing", r.smoothing, where);
  read(j, "gamma", r.gamma, where);
}

void read_adaptation(const json& j, AdaptationConfig& a, const std::string& where) {
  check_keys(j, where, {"learning_rate", "num_passes", "lambda", "m", "batch_size", "bn_stats"});
  read(j, "learning_rate", a.learning_rate, where);
  read(j, "num_passes", a.num_passes, where);
  read(j, "lambda", a.lambda, where);
  read(j, "m", a.m, where);
  read(j, "batch_size", a.batch_size, where);
  if (j.contains("bn_stats")) a.bn_stats_mode = parse_bn_stats_mode(j.at("bn_stats").get<std::string>());
}

json cohort_json(const CohortSettings& c) {
  return {{"count", c.count}, {"growth_min", c.growth_min}, {"growth_max", c.growth_max}};
}

json ranges_json(const ShiftRanges& r) {
  return {{"rotation", r.rotation}, {"scaling", r.scaling}, {"smoothing", r.smoothing}, {"gamma", r.gamma}};
}

json adaptation_json(const AdaptationConfig& a) {
  return {{"learning_rate", a.learning_rate}, {"num_passes", a.num_passes}, {"lambda", a.lambda},
          {"m", a.m},                         {"batch_size", a.batch_size}, {"bn_stats", to_string(a.bn_stats_mode)}};
}

void require_grid(const std::vector<double>& g, const std::string& name) {
  if (g.empty()) throw ConfigError(name + " grid is empty");
  for (double v : g) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(name + " grid values must be finite and >= 0");
  }
}

void validate_cohort(const CohortSettings& c, const std::string& name) {
  if (c.count == 0) throw ConfigError(name + ".count must be positive");
  if (!(c.growth_min >= 0.0 && c.growth_min <= c.growth_max && c.growth_max <= 1.0)) {
    throw ConfigError(name + " growth range must satisfy 0 <= growth_min <= growth_max <= 1");
  }
}

}  // namespace

const std::vector<double>& ShiftGrids::of(const std::string& kind) const {
  if (kind == "rotation") return rotation;
  if (kind == "scaling") return scaling;
  if (kind == "smoothing") return smoothing;
  if (kind == "gamma") return gamma;
  throw ConfigError("unknown shift kind '" + kind + "'");
}

ShiftRanges ShiftGrids::maxima() const {
  const auto mx = [](const std::vector<double>& g) { return g.empty() ? 0.0 : *std::max_element(g.begin(), g.end()); };
  return {mx(rotation), mx(scaling), mx(smoothing), mx(gamma)};
}

void ExperimentConfig::validate() const {
  for (std::size_t e : {phantom.grid.d, phantom.grid.h, phantom.grid.w}) {
    if (e < 4 || e % 2 != 0) throw ConfigError("phantom.grid extents must be even and >= 4");
  }
  if (!(phantom.noise >= 0.0)) throw ConfigError("phantom.noise must be >= 0");
  if (!(phantom.bias >= 0.0 && phantom.bias < 1.0)) throw ConfigError("phantom.bias must lie in [0, 1)");
  if (threads == 0) throw ConfigError("threads must be positive");

  validate_cohort(source.cohort, "source.cohort");
  validate_cohort(evaluation, "evaluation");
  if (source.steps == 0 || source.batch_size == 0) throw ConfigError("source.steps and batch_size must be positive");
  if (source.crop % 2 != 0) throw ConfigError("source.crop must be even (0 trains on whole volumes)");
  const std::size_t min_extent = std::min({phantom.grid.d, phantom.grid.h, phantom.grid.w});
  if (source.crop > min_extent) throw ConfigError("source.crop exceeds the phantom grid");
  if (!(source.augment_probability >= 0.0 && source.augment_probability <= 1.0)) {
    throw ConfigError("source.augment_probability must lie in [0, 1]");
  }
  if (!(source.learning_rate > 0.0)) throw ConfigError("source.learning_rate must be positive");
  if (source.importance_samples == 0) throw ConfigError("source.importance_samples must be positive");

  require_grid(shifts.rotation, "shifts.rotation");
  require_grid(shifts.scaling, "shifts.scaling");
  require_grid(shifts.smoothing, "shifts.smoothing");
  require_grid(shifts.gamma, "shifts.gamma");
  const ShiftRanges mx = shifts.maxima();
  const ShiftRanges& aug = source.augmentation;
  const auto below = [](double a, double e, const char* name) {
    if (!(a >= 0.0)) throw ConfigError(std::string("source.augmentation.") + name + " must be >= 0");
    if (!(a < e)) {
      throw ConfigError(std::string("source.augmentation.") + name +
                        " must be strictly below the largest evaluation magnitude");
    }
  };
  below(aug.rotation, mx.rotation, "rotation");
  below(aug.scaling, mx.scaling, "scaling");
  below(aug.smoothing, mx.smoothing, "smoothing");
  below(aug.gamma, mx.gamma, "gamma");

  if (shift_kinds.empty()) throw ConfigError("shift_kinds is empty");
  for (const std::string& k : shift_kinds) {
    if (!kShiftKinds.count(k)) throw ConfigError("unknown shift kind '" + k + "'");
  }
  if (methods.empty()) throw ConfigError("methods is empty");
  for (const std::string& m : methods) {
    if (!kMethods.count(m)) throw ConfigError("unknown method '" + m + "'");
  }
  if (modes.empty()) throw ConfigError("modes is empty");
  tent.validate();
  entropy_kl.validate();
  layer_inspect.validate();

  require_grid(sweep.rotations, "sweep.rotations");
  require_grid(sweep.lambda, "sweep.lambda");
  require_grid(sweep.lr, "sweep.lr");
  if (sweep.m.empty()) throw ConfigError("sweep.m grid is empty");
  for (std::size_t m : sweep.m) {
    if (m == 0) throw ConfigError("sweep.m values must be >= 1");
  }
  for (double lr : sweep.lr) {
    if (!(lr > 0.0)) throw ConfigError("sweep.lr values must be positive");
  }
  if (growth.bins < 3) throw ConfigError("growth.bins must be >= 3");
  if (growth.per_bin == 0) throw ConfigError("growth.per_bin must be positive");
  if (atlas.cohort == 0 || atlas.growth_bins == 0) throw ConfigError("atlas cohort and growth_bins must be positive");
}

const AdaptationConfig& ExperimentConfig::adaptation_for(const std::string& method) const {
  if (method == "tent") return tent;
  if (method == "entropy_kl") return entropy_kl;
  if (method == "layer_inspect") return layer_inspect;
  throw ConfigError("method '" + method + "' has no adaptation settings");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  check_keys(j, "config",
             {"seed", "threads", "output_dir", "phantom", "source", "evaluation", "shifts", "shift_kinds", "methods",
              "modes", "tent", "entropy_kl", "layer_inspect", "sweep", "growth", "atlas"});
  read(j, "seed", c.seed, "config");
  read(j, "threads", c.threads, "config");
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("phantom")) {
    const json& p = j.at("phantom");
    check_keys(p, "phantom", {"grid", "voxel_size_mm", "noise", "bias"});
    if (p.contains("grid")) {
      const auto g = p.at("grid").get<std::vector<std::size_t>>();
      if (g.size() != 3) throw ConfigError("phantom.grid must have three extents");
      c.phantom.grid = {g[0], g[1], g[2]};
    }
    read(p, "voxel_size_mm", c.phantom.voxel_size_mm, "phantom");
    read(p, "noise", c.phantom.noise, "phantom");
    read(p, "bias", c.phantom.bias, "phantom");
  }
  if (j.contains("source")) {
    const json& s = j.at("source");
    check_keys(s, "source",
               {"cohort", "steps", "batch_size", "crop", "augment_probability", "learning_rate", "augmentation",
                "importance_samples", "min_dice"});
    if (s.contains("cohort")) read_cohort(s.at("cohort"), c.source.cohort, "source.cohort");
    read(s, "steps", c.source.steps, "source");
    read(s, "batch_size", c.source.batch_size, "source");
    read(s, "crop", c.source.crop, "source");
    read(s, "augment_probability", c.source.augment_probability, "source");
    read(s, "learning_rate", c.source.learning_rate, "source");
    if (s.contains("augmentation")) read_ranges(s.at("augmentation"), c.source.augmentation, "source.augmentation");
    read(s, "importance_samples", c.source.importance_samples, "source");
    read(s, "min_dice", c.source.min_dice, "source");
  }
  if (j.contains("evaluation")) read_cohort(j.at("evaluation"), c.evaluation, "evaluation");
  if (j.contains("shifts")) {
    const json& s = j.at("shifts");
    check_keys(s, "shifts", {"rotation", "scaling", "smoothing", "gamma"});
    read(s, "rotation", c.shifts.rotation, "shifts");
    read(s, "scaling", c.shifts.scaling, "shifts");
    read(s, "smoothing", c.shifts.smoothing, "shifts");
    read(s, "gamma", c.shifts.gamma, "shifts");
  }
  read(j, "shift_kinds", c.shift_kinds, "config");
  read(j, "methods", c.methods, "config");
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j.at("modes")) c.modes.push_back(parse_batch_mode(m.get<std::string>()));
  }
  if (j.contains("tent")) read_adaptation(j.at("tent"), c.tent, "tent");
  if (j.contains("entropy_kl")) read_adaptation(j.at("entropy_kl"), c.entropy_kl, "entropy_kl");
  if (j.contains("layer_inspect")) read_adaptation(j.at("layer_inspect"), c.layer_inspect, "layer_inspect");
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    check_keys(s, "sweep", {"rotations", "lambda", "m", "lr"});
    read(s, "rotations", c.sweep.rotations, "sweep");
    read(s, "lambda", c.sweep.lambda, "sweep");
    read(s, "m", c.sweep.m, "sweep");
    read(s, "lr", c.sweep.lr, "sweep");
  }
  if (j.contains("growth")) {
    const json& g = j.at("growth");
    check_keys(g, "growth", {"bins", "per_bin"});
    read(g, "bins", c.growth.bins, "growth");
    read(g, "per_bin", c.growth.per_bin, "growth");
  }
  if (j.contains("atlas")) {
    const json& a = j.at("atlas");
    check_keys(a, "atlas", {"cohort", "growth_bins"});
    read(a, "cohort", c.atlas.cohort, "atlas");
    read(a, "growth_bins", c.atlas.growth_bins, "atlas");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& c) {
  json modes = json::array();
  for (BatchMode m : c.modes) modes.push_back(to_string(m));
  const json j = {
      {"seed", c.seed},
      {"threads", c.threads},
      {"output_dir", c.output_dir.string()},
      {"phantom",
       {{"grid", {c.phantom.grid.d, c.phantom.grid.h, c.phantom.grid.w}},
        {"voxel_size_mm", c.phantom.voxel_size_mm},
        {"noise", c.phantom.noise},
        {"bias", c.phantom.bias}}},
      {"source",
       {{"cohort", cohort_json(c.source.cohort)},
        {"steps", c.source.steps},
        {"batch_size", c.source.batch_size},
        {"crop", c.source.crop},
        {"augment_probability", c.source.augment_probability},
        {"learning_rate", c.source.learning_rate},
        {"augmentation", ranges_json(c.source.augmentation)},
        {"importance_samples", c.source.importance_samples},
        {"min_dice", c.source.min_dice}}},
      {"evaluation", cohort_json(c.evaluation)},
      {"shifts",
       {{"rotation", c.shifts.rotation},
        {"scaling", c.shifts.scaling},
        {"smoothing", c.shifts.smoothing},
        {"gamma", c.shifts.gamma}}},
      {"shift_kinds", c.shift_kinds},
      {"methods", c.methods},
      {"modes", modes},
      {"tent", adaptation_json(c.tent)},
      {"entropy_kl", adaptation_json(c.entropy_kl)},
      {"layer_inspect", adaptation_json(c.layer_inspect)},
      {"sweep", {{"rotations", c.sweep.rotations}, {"lambda", c.sweep.lambda}, {"m", c.sweep.m}, {"lr", c.sweep.lr}}},
      {"growth", {{"bins", c.growth.bins}, {"per_bin", c.growth.per_bin}}},
      {"atlas", {{"cohort", c.atlas.cohort}, {"growth_bins", c.atlas.growth_bins}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace tta::harness
