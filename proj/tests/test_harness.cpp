#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tta/error.hpp"
#include "tta/harness/config.hpp"
#include "tta/harness/csv.hpp"
#include "tta/harness/experiments.hpp"
#include "tta/harness/stats.hpp"
#include "tta/harness/svg_plot.hpp"

using namespace tta;
using namespace tta::harness;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "tta_harness_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

ResultRow row(const std::string& method, double magnitude, std::size_t sample, double dice,
              const std::string& shift = "rotation") {
  ResultRow r;
  r.method = method;
  r.mode = "single_sample";
  r.shift = shift;
  r.magnitude = magnitude;
  r.sample = sample;
  r.growth = 0.5;
  r.growth_bin = 2;
  r.class_dice = {dice, dice, dice, dice};
  r.mean_dice = dice;
  r.entropy_pre = 0.25;
  r.entropy_post = 0.125;
  return r;
}

}  // namespace

TEST(PairedTTest, FivePairHandExample) {
  const std::vector<double> a{0.60, 0.72, 0.55, 0.80, 0.65};
  const std::vector<double> b{0.66, 0.75, 0.61, 0.79, 0.70};
  // d = {0.06, 0.03, 0.06, -0.01, 0.05}; mean 0.038; sd sqrt(sum (d - mean)^2 / 4).
  const double d[5] = {0.06, 0.03, 0.06, -0.01, 0.05};
  double ss = 0.0;
  for (double x : d) ss += (x - 0.038) * (x - 0.038);
  const double sd = std::sqrt(ss / 4.0);
  const double t = 0.038 / (sd / std::sqrt(5.0));
  const PairedTTest r = paired_t_test(a, b);
  EXPECT_EQ(r.n, 5u);
  EXPECT_NEAR(r.mean_difference, 0.038, 1e-12);
  EXPECT_NEAR(r.sd_difference, sd, 1e-12);
  EXPECT_NEAR(r.t, t, 1e-6);
  EXPECT_NEAR(r.t, 2.8807725655998326, 1e-6);
  EXPECT_NEAR(r.p_value, 0.04497813973962846, 1e-6);  // t distribution with 4 degrees of freedom
  EXPECT_TRUE(r.significant(0.05));
}

TEST(PairedTTest, IdenticalAndConstantOffset) {
  const std::vector<double> a{0.5, 0.6, 0.7, 0.8};
  const PairedTTest same = paired_t_test(a, a);
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_TRUE(same.zero_variance);

  std::vector<double> x(30), y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    x[i] = 0.3 + 0.01 * static_cast<double>(i);
    y[i] = x[i] + 0.1;
  }
  const PairedTTest shift = paired_t_test(x, y);
  EXPECT_TRUE(shift.zero_variance);
  EXPECT_LT(shift.p_value, 1e-12);
  EXPECT_GT(shift.t, 0.0);
}

TEST(PairedTTest, InputErrors) {
  const std::vector<double> one{0.5};
  EXPECT_THROW(paired_t_test(one, one), ConfigError);
  const std::vector<double> a{0.5, 0.6}, b{0.5};
  EXPECT_THROW(paired_t_test(a, b), ConfigError);
  const std::vector<double> bad{0.5, NAN};
  EXPECT_THROW(paired_t_test(a, bad), NumericError);
}

TEST(Csv, RoundTripAndSortedOutput) {
  std::vector<ResultRow> rows{row("tent", 30, 1, 0.75), row("none", 30, 0, 0.5), row("none", 0, 0, 0.875),
                              row("tent", 30, 0, 1.0 / 3.0)};
  const auto path = temp_dir() / "rows.csv";
  write_results(path, rows);
  const std::string text = slurp(path);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "method,mode,shift,magnitude,axis,param,growth_bin,growth,sample,dice_1,dice_2,dice_3,dice_4,mean_dice,"
            "entropy_pre,entropy_post");
  const auto back = read_results(path);
  ASSERT_EQ(back.size(), 4u);
  sort_rows(rows);
  EXPECT_EQ(back, rows);
  EXPECT_EQ(back[0].magnitude, 0.0);
  EXPECT_EQ(back[1].method, "none");
  write_results(temp_dir() / "rows2.csv", rows);
  EXPECT_EQ(slurp(temp_dir() / "rows2.csv"), text);
}

TEST(Csv, MalformedInputIsRejected) {
  const auto path = temp_dir() / "bad.csv";
  std::ofstream(path) << "not,a,header\n";
  EXPECT_THROW(read_results(path), FormatError);
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(std::stod(format_number(1e-4)), 1e-4);
  EXPECT_EQ(std::stod(format_number(0.1 + 0.2)), 0.1 + 0.2);
}

TEST(Compare, PairsRowsBySample) {
  std::vector<ResultRow> rows;
  for (std::size_t s = 0; s < 6; ++s) {
    rows.push_back(row("none", 30, s, 0.5 + 0.01 * static_cast<double>(s)));
    rows.push_back(row("tent", 30, s, 0.55 + 0.012 * static_cast<double>(s)));
  }
  const Comparison c =
      compare(rows, RowFilter{"none", "", "rotation", true, 30}, rows, RowFilter{"tent", "", "rotation", true, 30});
  EXPECT_EQ(c.pairs, 6u);
  EXPECT_GT(c.mean_b, c.mean_a);
  EXPECT_GT(c.test.t, 0.0);
  const Comparison self = compare(rows, RowFilter{"none"}, rows, RowFilter{"none"});
  EXPECT_EQ(self.test.t, 0.0);
  EXPECT_EQ(self.test.p_value, 1.0);
  EXPECT_THROW(compare(rows, RowFilter{"none"}, rows, RowFilter{"layer_inspect"}), ConfigError);
  EXPECT_NE(format_comparison(c).find("p (two-sided)"), std::string::npos);
}

TEST(Plot, EmptyInputWritesNothing) {
  const auto path = temp_dir() / "empty.svg";
  std::filesystem::remove(path);
  EXPECT_THROW(write_plot(path, {}, PlotStyle::Shift), ConfigError);
  EXPECT_FALSE(std::filesystem::exists(path));
}

TEST(Plot, SingleMethodHasOneLineAndBand) {
  std::vector<ResultRow> rows;
  for (double m : {0.0, 10.0, 20.0}) {
    for (std::size_t s = 0; s < 3; ++s) rows.push_back(row("tent", m, s, 0.9 - 0.01 * m + 0.02 * s));
  }
  const std::string svg = render_svg(panels_from_results(rows, PlotStyle::Shift));
  EXPECT_EQ(count_of(svg, "<polyline"), 1u);
  EXPECT_EQ(count_of(svg, "<polygon"), 1u);
  EXPECT_EQ(svg, render_svg(panels_from_results(rows, PlotStyle::Shift)));
  const auto a = temp_dir() / "a.svg", b = temp_dir() / "b.svg";
  write_plot(a, rows, PlotStyle::Shift);
  write_plot(b, rows, PlotStyle::Shift);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Plot, GrowthAxisUsesWeeks) {
  std::vector<ResultRow> rows;
  for (std::size_t bin = 0; bin < 5; ++bin) {
    ResultRow r = row("none", 0, bin, 0.8, "none");
    r.growth_bin = bin;
    r.growth = (static_cast<double>(bin) + 0.5) / 5.0;
    rows.push_back(r);
  }
  const auto panels = panels_from_results(rows, PlotStyle::Growth);
  ASSERT_EQ(panels.size(), 1u);
  EXPECT_EQ(panels[0].x_ticks, (std::vector<double>{18, 20, 22, 24, 26}));
  const std::string svg = render_svg(panels);
  EXPECT_NE(svg.find(">18<"), std::string::npos);
  EXPECT_NE(svg.find(">26<"), std::string::npos);
  EXPECT_EQ(parse_plot_style("growth"), PlotStyle::Growth);
  EXPECT_THROW(parse_plot_style("pie"), ConfigError);
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  const ExperimentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  const ExperimentConfig back = parse_config(dump_config(cfg));
  EXPECT_EQ(dump_config(back), dump_config(cfg));
  EXPECT_EQ(cfg.shifts.rotation, (std::vector<double>{0, 5, 10, 20, 30, 45}));
  EXPECT_EQ(cfg.sweep.lambda, (std::vector<double>{0, 0.1, 0.5, 1, 2, 5, 10}));
  EXPECT_EQ(cfg.sweep.lr, (std::vector<double>{1e-5, 1e-4, 1e-3, 1e-2}));
  // Training augmentation is at most 40 % of each evaluation maximum.
  const ShiftRanges max = cfg.shifts.maxima();
  EXPECT_LE(cfg.source.augmentation.rotation, 0.4 * max.rotation + 1e-12);
  EXPECT_LE(cfg.source.augmentation.scaling, 0.4 * max.scaling + 1e-12);
  EXPECT_LE(cfg.source.augmentation.smoothing, 0.4 * max.smoothing + 1e-12);
  EXPECT_LE(cfg.source.augmentation.gamma, 0.4 * max.gamma + 1e-12);
}

TEST(Config, RejectsInvalidSettings) {
  EXPECT_THROW(parse_config(R"({"unknown_key": 1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"source": {"stepz": 3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"shifts": {"rotation": []}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"source": {"augmentation": {"rotation": 45}}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seed": "abc"})"), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config(R"({"methods": ["tent", "magic"]})"), ConfigError);
  const ExperimentConfig c = parse_config(R"({"seed": 7, "tent": {"learning_rate": 0.01}})");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_DOUBLE_EQ(c.tent.learning_rate, 0.01);
  EXPECT_THROW(load_config(temp_dir() / "missing.json"), ConfigError);
}

TEST(Experiments, CohortsAreSeededAndBounded) {
  ExperimentConfig cfg;
  cfg.phantom.grid = {16, 16, 16};
  const auto a = make_cohort(cfg, cfg.evaluation, 2);
  const auto b = make_cohort(cfg, cfg.evaluation, 2);
  ASSERT_EQ(a.size(), cfg.evaluation.count);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].phantom.volume, b[i].phantom.volume);
    EXPECT_GE(a[i].growth, cfg.evaluation.growth_min);
    EXPECT_LE(a[i].growth, cfg.evaluation.growth_max);
  }
  cfg.seed = 43;
  EXPECT_NE(make_cohort(cfg, cfg.evaluation, 2)[0].phantom.volume, a[0].phantom.volume);
  EXPECT_EQ(parse_sweep_axis("lr"), SweepAxis::LearningRate);
  EXPECT_THROW(parse_sweep_axis("epochs"), ConfigError);
  EXPECT_EQ(checkpoint_path("out"), std::filesystem::path("out") / "source.ttck");
}
