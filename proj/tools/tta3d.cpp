#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "tta/checkpoint.hpp"
#include "tta/error.hpp"
#include "tta/harness/acceptance.hpp"
#include "tta/harness/config.hpp"
#include "tta/harness/csv.hpp"
#include "tta/harness/experiments.hpp"
#include "tta/harness/svg_plot.hpp"

namespace {

using namespace tta;
using namespace tta::harness;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.output_dir = *g.out;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

Network load_source(const ExperimentConfig& cfg, const std::string& path) {
  const std::filesystem::path p = path.empty() ? checkpoint_path(cfg.output_dir) : std::filesystem::path(path);
  if (!std::filesystem::exists(p)) throw ConfigError("checkpoint " + p.string() + " not found; run train-source first");
  return load_checkpoint(p);
}

void emit(const ExperimentConfig& cfg, const EvalOutput& out, const std::string& stem, PlotStyle style) {
  const std::filesystem::path csv = cfg.output_dir / (stem + ".csv");
  write_results(csv, out.rows);
  write_timings(cfg.output_dir / (stem + "_timing.csv"), out.timings);
  write_plot(cfg.output_dir / (stem + ".svg"), out.rows, style);
  std::cout << "wrote " << csv.string() << " (" << out.rows.size() << " rows)" << std::endl;
}

RowFilter make_filter(const std::string& method, const std::string& mode, const std::string& shift,
                      std::optional<double> magnitude) {
  RowFilter f{method, mode, shift, magnitude.has_value(), magnitude.value_or(0.0)};
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time adaptation of a 3-D segmentation network on synthetic phantoms"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Top-level seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads for single-sample adaptation")->check(CLI::PositiveNumber);

  std::string checkpoint;
  auto* train = app.add_subcommand("train-source", "Train the source model and cache its importance vector");
  auto* eval = app.add_subcommand("adapt-eval", "Evaluate every method on every shift kind and magnitude");
  eval->add_option("--checkpoint", checkpoint, "Source checkpoint (default <out>/source.ttck)");
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep lambda, m or the learning rate at fixed rotations");
  std::string axis;
  sweep_cmd->add_option("--axis", axis, "lambda, m or lr")->required()->check(CLI::IsMember({"lambda", "m", "lr"}));
  sweep_cmd->add_option("--checkpoint", checkpoint, "Source checkpoint");
  auto* growth_cmd = app.add_subcommand("growth-curve", "Evaluate every method across growth bins");
  growth_cmd->add_option("--checkpoint", checkpoint, "Source checkpoint");

  auto* compare_cmd = app.add_subcommand("compare", "Paired t-test on per-sample mean Dice of two CSVs");
  std::string csv_a, csv_b, method_a, method_b, mode, shift;
  std::optional<double> magnitude;
  compare_cmd->add_option("csv_a", csv_a, "Result CSV A")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("csv_b", csv_b, "Result CSV B (may equal A)")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--method-a", method_a, "Method filter for A");
  compare_cmd->add_option("--method-b", method_b, "Method filter for B");
  compare_cmd->add_option("--mode", mode, "single_sample or full_dataset");
  compare_cmd->add_option("--shift", shift, "Shift kind filter");
  compare_cmd->add_option("--magnitude", magnitude, "Shift magnitude filter");

  auto* plot_cmd = app.add_subcommand("plot", "Render a result CSV as SVG");
  std::string plot_csv, style = "shift", plot_out;
  plot_cmd->add_option("csv", plot_csv, "Result CSV")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--style", style, "shift, sweep or growth")->check(CLI::IsMember({"shift", "sweep", "growth"}));
  plot_cmd->add_option("--output", plot_out, "SVG path (default: CSV path with .svg)");

  auto* accept = app.add_subcommand("run-acceptance", "Train, evaluate and check acceptance criteria 1 to 10");
  bool no_repeat = false;
  accept->add_flag("--no-repeat", no_repeat, "Skip the second pipeline run of the determinism check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      const ExperimentConfig cfg = resolve_config(g);
      std::ofstream(cfg.output_dir / "config.json") << dump_config(cfg);
      const TrainResult r = train_source(cfg, log_line);
      save_checkpoint(r.network, checkpoint_path(cfg.output_dir));
      std::cout << "in-distribution mean Dice " << format_number(r.in_distribution_dice) << std::endl;
      std::cout << "wrote " << checkpoint_path(cfg.output_dir).string() << std::endl;
      if (r.in_distribution_dice < cfg.source.min_dice) {
        std::cerr << "warning: in-distribution Dice is below source.min_dice ("
                  << format_number(cfg.source.min_dice) << ")" << std::endl;
      }
    } else if (*eval) {
      const ExperimentConfig cfg = resolve_config(g);
      const Network source = load_source(cfg, checkpoint);
      emit(cfg, adapt_eval(cfg, source, make_atlas(cfg), default_eval_request(cfg), log_line), "adapt_eval",
           PlotStyle::Shift);
    } else if (*sweep_cmd) {
      const ExperimentConfig cfg = resolve_config(g);
      const Network source = load_source(cfg, checkpoint);
      const SweepAxis a = parse_sweep_axis(axis);
      emit(cfg, sweep(cfg, source, make_atlas(cfg), a, log_line), std::string("sweep_") + to_string(a),
           PlotStyle::Sweep);
    } else if (*growth_cmd) {
      const ExperimentConfig cfg = resolve_config(g);
      const Network source = load_source(cfg, checkpoint);
      emit(cfg, growth_curve(cfg, source, make_atlas(cfg), log_line), "growth_curve", PlotStyle::Growth);
    } else if (*compare_cmd) {
      const auto a = read_results(csv_a);
      const auto b = read_results(csv_b);
      const Comparison c =
          compare(a, make_filter(method_a, mode, shift, magnitude), b, make_filter(method_b, mode, shift, magnitude));
      std::cout << format_comparison(c);
    } else if (*plot_cmd) {
      std::filesystem::path out = plot_out.empty() ? std::filesystem::path(plot_csv).replace_extension(".svg")
                                                   : std::filesystem::path(plot_out);
      write_plot(out, read_results(plot_csv), parse_plot_style(style));
      std::cout << "wrote " << out.string() << std::endl;
    } else if (*accept) {
      const ExperimentConfig cfg = resolve_config(g);
      AcceptanceOptions opt;
      opt.repeat_run = !no_repeat;
      const AcceptanceReport report = run_acceptance(cfg, cfg.output_dir, opt, log_line);
      std::cout << report.format();
      return report.all_passed() ? kExitOk : kExitFailure;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << std::endl;
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitFailure;
  }
  return kExitOk;
}
