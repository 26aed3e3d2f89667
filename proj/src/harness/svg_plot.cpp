#include "tta/harness/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>

#include "tta/error.hpp"
#include "tta/harness/stats.hpp"
#include "tta/phantom.hpp"

namespace tta::harness {
namespace {

constexpr double kPanelWidth = 420.0;
constexpr double kPanelHeight = 300.0;
constexpr double kMarginLeft = 60.0;
constexpr double kMarginRight = 20.0;
constexpr double kMarginTop = 36.0;
constexpr double kMarginBottom = 48.0;
constexpr double kLegendWidth = 200.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<double> nice_ticks(double lo, double hi) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> t;
  for (double v = std::ceil(lo / step - 1e-9) * step; v <= hi + 1e-9 * step; v += step) {
    t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  }
  return t;
}

bool log_axis(const std::vector<Series>& series, const std::string& axis) {
  if (axis != "lr") return false;
  for (const Series& s : series) {
    for (double x : s.x) {
      if (!(x > 0.0)) return false;
    }
  }
  return true;
}

}  // namespace

PlotStyle parse_plot_style(const std::string& s) {
  if (s == "shift") return PlotStyle::Shift;
  if (s == "sweep") return PlotStyle::Sweep;
  if (s == "growth") return PlotStyle::Growth;
  throw ConfigError("unknown plot style '" + s + "' (shift, sweep, growth)");
}

std::vector<Panel> panels_from_results(const std::vector<ResultRow>& rows, PlotStyle style) {
  if (rows.empty()) throw ConfigError("nothing to plot: no result rows");
  bool several_modes = false;
  for (const ResultRow& r : rows) several_modes = several_modes || r.mode != rows.front().mode;

  // panel key -> series key -> x -> per-sample Dice
  std::map<std::string, std::map<std::string, std::map<double, std::vector<double>>>> groups;
  std::size_t growth_bins = 1;
  for (const ResultRow& r : rows) growth_bins = std::max(growth_bins, r.growth_bin + 1);
  for (const ResultRow& r : rows) {
    std::string panel;
    double x = 0.0;
    switch (style) {
      case PlotStyle::Shift:
        panel = r.shift;
        x = r.magnitude;
        break;
      case PlotStyle::Sweep:
        panel = r.axis + "|" + r.shift + " " + format_number(r.magnitude);
        x = r.param;
        break;
      case PlotStyle::Growth:
        panel = "growth";
        x = growth_to_week((static_cast<double>(r.growth_bin) + 0.5) / static_cast<double>(growth_bins));
        break;
    }
    const std::string series = several_modes ? r.method + " (" + r.mode + ")" : r.method;
    groups[panel][series][x].push_back(r.mean_dice);
  }

  std::vector<Panel> panels;
  for (const auto& [key, series_map] : groups) {
    Panel p;
    switch (style) {
      case PlotStyle::Shift:
        p.title = "Dice vs " + key + " magnitude";
        p.x_label = key == "rotation" ? "rotation (degrees)" : key == "smoothing" ? "sigma (voxels)"
                    : key == "gamma" ? "log gamma" : key == "scaling" ? "log scale" : "magnitude";
        break;
      case PlotStyle::Sweep: {
        const std::string axis = key.substr(0, key.find('|'));
        p.title = "Dice vs " + axis + " (" + key.substr(key.find('|') + 1) + ")";
        p.x_label = axis;
        break;
      }
      case PlotStyle::Growth:
        p.title = "Dice vs gestational week";
        p.x_label = "gestational week (abstract, 18-26)";
        p.x_ticks = {18, 20, 22, 24, 26};
        break;
    }
    for (const auto& [name, points] : series_map) {
      Series s;
      s.name = name;
      for (const auto& [x, values] : points) {
        s.x.push_back(x);
        s.mean.push_back(mean(values));
        s.sd.push_back(sample_sd(values));
      }
      p.series.push_back(std::move(s));
    }
    panels.push_back(std::move(p));
  }
  return panels;
}

std::string render_svg(const std::vector<Panel>& panels) {
  if (panels.empty()) throw ConfigError("nothing to plot: no panels");
  const double width = kPanelWidth * static_cast<double>(panels.size()) + kLegendWidth;
  const double height = kPanelHeight;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                    num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) +
                    "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + num(width) + "\" height=\"" + num(height) + "\" fill=\"white\"/>\n";

  std::map<std::string, std::size_t> colour_of;
  for (const Panel& p : panels) {
    for (const Series& s : p.series) colour_of.emplace(s.name, 0);
  }
  std::size_t ci = 0;
  for (auto& [name, c] : colour_of) c = ci++;

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const Panel& p = panels[pi];
    const double ox = kPanelWidth * static_cast<double>(pi);
    const double px0 = ox + kMarginLeft, px1 = ox + kPanelWidth - kMarginRight;
    const double py0 = kMarginTop, py1 = kPanelHeight - kMarginBottom;
    const std::string axis = p.x_label;
    const bool logx = log_axis(p.series, axis);

    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    double ylo = 0.0, yhi = 1.0;
    for (const Series& s : p.series) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double x = logx ? std::log10(s.x[i]) : s.x[i];
        xlo = std::min(xlo, x);
        xhi = std::max(xhi, x);
        ylo = std::min(ylo, s.mean[i] - s.sd[i]);
        yhi = std::max(yhi, s.mean[i] + s.sd[i]);
      }
    }
    if (!p.x_ticks.empty()) {
      xlo = std::min(xlo, p.x_ticks.front());
      xhi = std::max(xhi, p.x_ticks.back());
    }
    if (!(xhi > xlo)) {
      xlo -= 0.5;
      xhi += 0.5;
    }
    const auto sx = [&](double x) { return px0 + (x - xlo) / (xhi - xlo) * (px1 - px0); };
    const auto sy = [&](double y) { return py1 - (y - ylo) / (yhi - ylo) * (py1 - py0); };

    svg += "<g>\n<text x=\"" + num((px0 + px1) / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" +
           escape(p.title) + "</text>\n";
    svg += "<rect x=\"" + num(px0) + "\" y=\"" + num(py0) + "\" width=\"" + num(px1 - px0) + "\" height=\"" +
           num(py1 - py0) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    const std::vector<double> xt = !p.x_ticks.empty() ? p.x_ticks : nice_ticks(xlo, xhi);
    for (double t : xt) {
      svg += "<line x1=\"" + num(sx(t)) + "\" y1=\"" + num(py1) + "\" x2=\"" + num(sx(t)) + "\" y2=\"" +
             num(py1 + 4) + "\" stroke=\"#444\"/>\n";
      svg += "<text x=\"" + num(sx(t)) + "\" y=\"" + num(py1 + 16) + "\" text-anchor=\"middle\">" +
             escape(logx ? "1e" + tick_label(t) : tick_label(t)) + "</text>\n";
    }
    for (double t : nice_ticks(ylo, yhi)) {
      svg += "<line x1=\"" + num(px0 - 4) + "\" y1=\"" + num(sy(t)) + "\" x2=\"" + num(px0) + "\" y2=\"" +
             num(sy(t)) + "\" stroke=\"#444\"/>\n";
      svg += "<text x=\"" + num(px0 - 6) + "\" y=\"" + num(sy(t) + 4) + "\" text-anchor=\"end\">" + tick_label(t) +
             "</text>\n";
    }
    svg += "<text x=\"" + num((px0 + px1) / 2) + "\" y=\"" + num(kPanelHeight - 12) + "\" text-anchor=\"middle\">" +
           escape(p.x_label) + "</text>\n";
    svg += "<text x=\"14\" y=\"" + num((py0 + py1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
           num((py0 + py1) / 2) + ")\">" + escape(p.y_label) + "</text>\n";

    for (const Series& s : p.series) {
      const char* colour = kPalette[colour_of.at(s.name) % std::size(kPalette)];
      const auto xs = [&](std::size_t i) { return sx(logx ? std::log10(s.x[i]) : s.x[i]); };
      std::string band;
      for (std::size_t i = 0; i < s.x.size(); ++i) band += num(xs(i)) + "," + num(sy(s.mean[i] + s.sd[i])) + " ";
      for (std::size_t i = s.x.size(); i-- > 0;) band += num(xs(i)) + "," + num(sy(s.mean[i] - s.sd[i])) + " ";
      band.pop_back();
      svg += "<polygon class=\"band\" points=\"" + band + "\" fill=\"" + colour +
             "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
      std::string line;
      for (std::size_t i = 0; i < s.x.size(); ++i) line += num(xs(i)) + "," + num(sy(s.mean[i])) + " ";
      line.pop_back();
      svg += "<polyline class=\"mean\" points=\"" + line + "\" fill=\"none\" stroke=\"" + colour +
             "\" stroke-width=\"1.8\"/>\n";
    }
    svg += "</g>\n";
  }

  const double lx = kPanelWidth * static_cast<double>(panels.size()) + 10.0;
  double ly = kMarginTop + 6.0;
  for (const auto& [name, c] : colour_of) {
    const char* colour = kPalette[c % std::size(kPalette)];
    svg += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(lx + 20) + "\" y2=\"" + num(ly) +
           "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(lx + 26) + "\" y=\"" + num(ly + 4) + "\">" + escape(name) + "</text>\n";
    ly += 16.0;
  }
  svg += "</svg>\n";
  return svg;
}

void write_plot(const std::filesystem::path& path, const std::vector<ResultRow>& rows, PlotStyle style) {
  const std::string svg = render_svg(panels_from_results(rows, style));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << svg;
}

}  // namespace tta::harness
