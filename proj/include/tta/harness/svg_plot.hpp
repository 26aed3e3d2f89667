#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tta/harness/csv.hpp"

namespace tta::harness {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> sd;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label = "mean Dice";
  std::vector<Series> series;
  /// Fixed x range and ticks; derived from the data when empty.
  std::vector<double> x_ticks;
};

enum class PlotStyle {
  Shift,   ///< Dice vs shift magnitude, one panel per shift kind
  Sweep,   ///< Dice vs swept hyperparameter, one panel per axis
  Growth,  ///< Dice vs gestational week (growth bin), single panel
};

PlotStyle parse_plot_style(const std::string& s);

/// Groups rows into panels of mean +- sd series, ordered by key.
std::vector<Panel> panels_from_results(const std::vector<ResultRow>& rows, PlotStyle style);

/// Deterministic SVG: mean line plus a shaded +-1 sd band per series.
std::string render_svg(const std::vector<Panel>& panels);

/// Renders rows to `path`. Empty input throws before any file is created.
void write_plot(const std::filesystem::path& path, const std::vector<ResultRow>& rows, PlotStyle style);

}  // namespace tta::harness
