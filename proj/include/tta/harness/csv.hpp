#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace tta::harness {

/// One evaluation of one method on one sample.
struct ResultRow {
  std::string method;  // none, histogram_match, tent, entropy_kl, layer_inspect
  std::string mode;    // single_sample, full_dataset
  std::string shift;   // rotation, scaling, smoothing, gamma, none
  double magnitude = 0.0;
  std::string axis = "-";  // swept hyperparameter (lambda, m, lr) or "-"
  double param = 0.0;
  std::size_t growth_bin = 0;
  double growth = 0.0;
  std::size_t sample = 0;
  std::vector<double> class_dice;  // foreground classes 1..C-1
  double mean_dice = 0.0;
  double entropy_pre = 0.0;
  double entropy_post = 0.0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// Wall time of one row, kept out of the result CSV so that results stay
/// byte-identical between runs.
struct TimingRow {
  std::string method;
  std::string mode;
  std::string shift;
  double magnitude = 0.0;
  std::string axis = "-";
  double param = 0.0;
  std::size_t sample = 0;
  double wall_ms = 0.0;
};

/// Sorts on (shift, magnitude, axis, param, growth_bin, method, mode, sample).
void sort_rows(std::vector<ResultRow>& rows);

std::string results_header(std::size_t foreground_classes);
std::string format_row(const ResultRow& row);
std::string format_results(const std::vector<ResultRow>& rows);

/// Writes rows sorted; throws ConfigError when the rows disagree on class count.
void write_results(const std::filesystem::path& path, std::vector<ResultRow> rows);
void write_timings(const std::filesystem::path& path, const std::vector<TimingRow>& rows);
std::vector<ResultRow> read_results(const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_number(double v);

}  // namespace tta::harness
