#include "tta/harness/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <tuple>

#include "tta/error.hpp"

namespace tta::harness {
namespace {

constexpr std::size_t kLeadingColumns = 9;
constexpr std::size_t kTrailingColumns = 3;

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw FormatError("line " + std::to_string(line_no) + ": '" + s + "' is not a number");
  }
  return v;
}

std::size_t parse_size(const std::string& s, std::size_t line_no) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("line " + std::to_string(line_no) + ": '" + s + "' is not an index");
  }
  return v;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

void sort_rows(std::vector<ResultRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.shift, a.magnitude, a.axis, a.param, a.growth_bin, a.method, a.mode, a.sample) <
           std::tie(b.shift, b.magnitude, b.axis, b.param, b.growth_bin, b.method, b.mode, b.sample);
  });
}

std::string results_header(std::size_t foreground_classes) {
  std::string h = "method,mode,shift,magnitude,axis,param,growth_bin,growth,sample";
  for (std::size_t k = 1; k <= foreground_classes; ++k) h += ",dice_" + std::to_string(k);
  h += ",mean_dice,entropy_pre,entropy_post";
  return h;
}

std::string format_row(const ResultRow& r) {
  std::string s = r.method + "," + r.mode + "," + r.shift + "," + format_number(r.magnitude) + "," + r.axis + "," +
                  format_number(r.param) + "," + std::to_string(r.growth_bin) + "," + format_number(r.growth) + "," +
                  std::to_string(r.sample);
  for (double d : r.class_dice) s += "," + format_number(d);
  s += "," + format_number(r.mean_dice) + "," + format_number(r.entropy_pre) + "," + format_number(r.entropy_post);
  return s;
}

std::string format_results(const std::vector<ResultRow>& rows) {
  const std::size_t fg = rows.empty() ? 0 : rows.front().class_dice.size();
  std::string out = results_header(fg) + "\n";
  for (const ResultRow& r : rows) {
    if (r.class_dice.size() != fg) throw ConfigError("result rows disagree on the number of classes");
    out += format_row(r) + "\n";
  }
  return out;
}

void write_results(const std::filesystem::path& path, std::vector<ResultRow> rows) {
  sort_rows(rows);
  const std::string text = format_results(rows);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void write_timings(const std::filesystem::path& path, const std::vector<TimingRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,mode,shift,magnitude,axis,param,sample,wall_ms\n";
  for (const TimingRow& t : rows) {
    out << t.method << ',' << t.mode << ',' << t.shift << ',' << format_number(t.magnitude) << ',' << t.axis << ','
        << format_number(t.param) << ',' << t.sample << ',' << format_number(t.wall_ms) << '\n';
  }
}

std::vector<ResultRow> read_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open results file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
  const std::vector<std::string> header = split(line);
  if (header.size() < kLeadingColumns + kTrailingColumns) throw FormatError(path.string() + ": unexpected header");
  const std::size_t fg = header.size() - kLeadingColumns - kTrailingColumns;
  if (line != results_header(fg)) throw FormatError(path.string() + ": unexpected header '" + line + "'");

  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line);
    if (f.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(f.size()));
    }
    ResultRow r;
    r.method = f[0];
    r.mode = f[1];
    r.shift = f[2];
    r.magnitude = parse_double(f[3], line_no);
    r.axis = f[4];
    r.param = parse_double(f[5], line_no);
    r.growth_bin = parse_size(f[6], line_no);
    r.growth = parse_double(f[7], line_no);
    r.sample = parse_size(f[8], line_no);
    for (std::size_t k = 0; k < fg; ++k) r.class_dice.push_back(parse_double(f[kLeadingColumns + k], line_no));
    r.mean_dice = parse_double(f[kLeadingColumns + fg], line_no);
    r.entropy_pre = parse_double(f[kLeadingColumns + fg + 1], line_no);
    r.entropy_post = parse_double(f[kLeadingColumns + fg + 2], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace tta::harness
