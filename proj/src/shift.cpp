#include "tta/shift.hpp"

#include <algorithm>
#include <cmath>

#include "tta/error.hpp"
#include "tta/rng.hpp"

namespace tta {
namespace {

constexpr double kFieldTolerance = 1e-6;

std::array<double, 9> matmul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      c[i * 3 + j] = s;
    }
  }
  return c;
}

std::array<double, 9> transpose(const std::array<double, 9>& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

void require_same_dims(const Volume& v, const LabelMap& labels) {
  if (v.dims != labels.dims) throw ShapeError("volume and label map extents differ");
}

void require_magnitude(double x) {
  if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("shift magnitude must be finite and >= 0");
}

// Source coordinate along one axis, or false when outside the field.
inline bool in_field(double s, std::size_t n) {
  return s >= -kFieldTolerance && s <= static_cast<double>(n - 1) + kFieldTolerance;
}

template <typename Fn>
void for_each_source(const Dims& dims, const Affine3& inv, Fn&& fn) {
  const double cd = (static_cast<double>(dims.d) - 1.0) / 2.0;
  const double ch = (static_cast<double>(dims.h) - 1.0) / 2.0;
  const double cw = (static_cast<double>(dims.w) - 1.0) / 2.0;
  const auto& m = inv.m;
  std::size_t i = 0;
  for (std::size_t d = 0; d < dims.d; ++d) {
    const double od = static_cast<double>(d) - cd;
    for (std::size_t h = 0; h < dims.h; ++h) {
      const double oh = static_cast<double>(h) - ch;
      for (std::size_t w = 0; w < dims.w; ++w, ++i) {
        const double ow = static_cast<double>(w) - cw;
        const double sd = m[0] * od + m[1] * oh + m[2] * ow + cd;
        const double sh = m[3] * od + m[4] * oh + m[5] * ow + ch;
        const double sw = m[6] * od + m[7] * oh + m[8] * ow + cw;
        fn(i, sd, sh, sw);
      }
    }
  }
}

std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  std::vector<double> k(2 * radius + 1);
  for (std::size_t j = 0; j < k.size(); ++j) {
    const double x = static_cast<double>(j) - static_cast<double>(radius);
    k[j] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  return k;
}

// Smooths along one axis with border renormalization. stride/extent describe the axis.
void smooth_axis(std::vector<float>& data, const Dims& dims, int axis, const std::vector<double>& kernel) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::size_t extent = axis == 0 ? dims.d : axis == 1 ? dims.h : dims.w;
  const std::size_t stride = axis == 0 ? dims.h * dims.w : axis == 1 ? dims.w : 1;
  const std::size_t lines = dims.count() / extent;
  std::vector<float> out(data.size());
  std::vector<double> line(extent);
  for (std::size_t l = 0; l < lines; ++l) {
    // Base offset of line l: decompose over the two other axes.
    std::size_t base;
    if (axis == 0) {
      base = l;
    } else if (axis == 1) {
      base = (l / dims.w) * dims.h * dims.w + (l % dims.w);
    } else {
      base = l * dims.w;
    }
    for (std::size_t i = 0; i < extent; ++i) line[i] = data[base + i * stride];
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(extent); ++i) {
      double acc = 0.0, wsum = 0.0;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-r, -i);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(r, static_cast<std::ptrdiff_t>(extent) - 1 - i);
      for (std::ptrdiff_t j = lo; j <= hi; ++j) {
        const double wk = kernel[static_cast<std::size_t>(j + r)];
        acc += wk * line[static_cast<std::size_t>(i + j)];
        wsum += wk;
      }
      out[base + static_cast<std::size_t>(i) * stride] = static_cast<float>(acc / wsum);
    }
  }
  data.swap(out);
}

}  // namespace

const char* to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::Rotation: return "rotation";
    case ShiftKind::Scaling: return "scaling";
    case ShiftKind::GaussianSmooth: return "smoothing";
    case ShiftKind::GammaCorrection: return "gamma";
    case ShiftKind::Compose: return "compose";
  }
  return "?";
}

ShiftKind parse_shift_kind(std::string_view s) {
  if (s == "rotation") return ShiftKind::Rotation;
  if (s == "scaling") return ShiftKind::Scaling;
  if (s == "smoothing") return ShiftKind::GaussianSmooth;
  if (s == "gamma") return ShiftKind::GammaCorrection;
  if (s == "compose") return ShiftKind::Compose;
  throw ConfigError("unknown shift kind '" + std::string(s) + "' (rotation, scaling, smoothing, gamma, compose)");
}

bool Affine3::is_identity() const { return m == std::array<double, 9>{1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Affine3 rotation_inverse(const std::array<double, 3>& degrees) {
  const auto rad = [](double deg) { return deg * M_PI / 180.0; };
  const double a = rad(degrees[0]), b = rad(degrees[1]), c = rad(degrees[2]);
  // Rotation about the depth axis acts in the (h, w) plane, and so on.
  const std::array<double, 9> rd{1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a)};
  const std::array<double, 9> rh{std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b)};
  const std::array<double, 9> rw{std::cos(c), -std::sin(c), 0, std::sin(c), std::cos(c), 0, 0, 0, 1};
  Affine3 out;
  if (degrees == std::array<double, 3>{0, 0, 0}) return out;
  out.m = transpose(matmul(matmul(rd, rh), rw));
  return out;
}

Affine3 scaling_inverse(const std::array<double, 3>& factors) {
  for (double f : factors) {
    if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("scale factors must be positive");
  }
  Affine3 out;
  out.m = {1.0 / factors[0], 0, 0, 0, 1.0 / factors[1], 0, 0, 0, 1.0 / factors[2]};
  return out;
}

Volume resample_volume(const Volume& v, const Affine3& inverse) {
  if (inverse.is_identity()) return v;
  Volume out(v.dims, v.voxel_size_mm, 0.0f);
  const Dims& dm = v.dims;
  for_each_source(dm, inverse, [&](std::size_t i, double sd, double sh, double sw) {
    if (!in_field(sd, dm.d) || !in_field(sh, dm.h) || !in_field(sw, dm.w)) return;
    sd = std::clamp(sd, 0.0, static_cast<double>(dm.d - 1));
    sh = std::clamp(sh, 0.0, static_cast<double>(dm.h - 1));
    sw = std::clamp(sw, 0.0, static_cast<double>(dm.w - 1));
    const std::size_t d0 = std::min(static_cast<std::size_t>(sd), dm.d > 1 ? dm.d - 2 : 0);
    const std::size_t h0 = std::min(static_cast<std::size_t>(sh), dm.h > 1 ? dm.h - 2 : 0);
    const std::size_t w0 = std::min(static_cast<std::size_t>(sw), dm.w > 1 ? dm.w - 2 : 0);
    const std::size_t d1 = std::min(d0 + 1, dm.d - 1), h1 = std::min(h0 + 1, dm.h - 1), w1 = std::min(w0 + 1, dm.w - 1);
    const double fd = sd - static_cast<double>(d0), fh = sh - static_cast<double>(h0), fw = sw - static_cast<double>(w0);
    const auto val = [&](std::size_t d, std::size_t h, std::size_t w) { return static_cast<double>(v.at(d, h, w)); };
    const double c00 = val(d0, h0, w0) * (1 - fw) + val(d0, h0, w1) * fw;
    const double c01 = val(d0, h1, w0) * (1 - fw) + val(d0, h1, w1) * fw;
    const double c10 = val(d1, h0, w0) * (1 - fw) + val(d1, h0, w1) * fw;
    const double c11 = val(d1, h1, w0) * (1 - fw) + val(d1, h1, w1) * fw;
    const double c0 = c00 * (1 - fh) + c01 * fh;
    const double c1 = c10 * (1 - fh) + c11 * fh;
    out.values[i] = static_cast<float>(c0 * (1 - fd) + c1 * fd);
  });
  return out;
}

LabelMap resample_labels(const LabelMap& labels, const Affine3& inverse) {
  if (inverse.is_identity()) return labels;
  LabelMap out(labels.dims, labels.voxel_size_mm, 0);
  const Dims& dm = labels.dims;
  for_each_source(dm, inverse, [&](std::size_t i, double sd, double sh, double sw) {
    if (!in_field(sd, dm.d) || !in_field(sh, dm.h) || !in_field(sw, dm.w)) return;
    const auto nearest = [](double s, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(std::lround(s), 0L, static_cast<long>(n) - 1));
    };
    out.values[i] = labels.at(nearest(sd, dm.d), nearest(sh, dm.h), nearest(sw, dm.w));
  });
  return out;
}

ShiftedSample rotate(const Volume& v, const LabelMap& labels, const std::array<double, 3>& degrees) {
  require_same_dims(v, labels);
  const Affine3 inv = rotation_inverse(degrees);
  return {resample_volume(v, inv),
          resample_labels(labels, inv),
          {{"angle_d", degrees[0]}, {"angle_h", degrees[1]}, {"angle_w", degrees[2]}}};
}

ShiftedSample scale(const Volume& v, const LabelMap& labels, const std::array<double, 3>& factors) {
  require_same_dims(v, labels);
  const Affine3 inv = scaling_inverse(factors);
  return {resample_volume(v, inv),
          resample_labels(labels, inv),
          {{"scale_d", factors[0]}, {"scale_h", factors[1]}, {"scale_w", factors[2]}}};
}

Volume gaussian_smooth(const Volume& v, double sigma) { return gaussian_smooth(v, {sigma, sigma, sigma}); }

Volume gaussian_smooth(const Volume& v, const std::array<double, 3>& sigmas) {
  for (double s : sigmas) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sigma must be finite and >= 0");
  }
  Volume out = v;
  for (int axis = 0; axis < 3; ++axis) {
    if (sigmas[axis] == 0.0) continue;
    const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigmas[axis]));
    smooth_axis(out.values, out.dims, axis, gaussian_kernel(sigmas[axis], radius));
  }
  return out;
}

Volume gamma_correct(const Volume& v, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be positive");
  if (gamma == 1.0) return v;
  if (v.values.empty()) throw ShapeError("gamma correction of an empty volume");
  const auto [lo_it, hi_it] = std::minmax_element(v.values.begin(), v.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw ConfigError("gamma correction needs a volume with nonconstant intensity");
  Volume out = v;
  for (float& x : out.values) {
    const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    x = static_cast<float>(std::pow(t, gamma) * (hi - lo) + lo);
  }
  return out;
}

ShiftedSample apply_rotation(const Volume& v, const LabelMap& labels, double x_deg, std::uint64_t seed) {
  require_magnitude(x_deg);
  Rng rng(seed);
  std::array<double, 3> angles{};
  for (double& a : angles) a = x_deg == 0.0 ? 0.0 : rng.uniform(-x_deg, x_deg);
  return rotate(v, labels, angles);
}

ShiftedSample apply_scaling(const Volume& v, const LabelMap& labels, double x, std::uint64_t seed) {
  require_magnitude(x);
  Rng rng(seed);
  std::array<double, 3> factors{};
  for (double& f : factors) f = x == 0.0 ? 1.0 : std::exp(rng.uniform(-x, x));
  return scale(v, labels, factors);
}

ShiftedSample apply_gaussian_smooth(const Volume& v, const LabelMap& labels, double x, std::uint64_t seed) {
  require_magnitude(x);
  require_same_dims(v, labels);
  Rng rng(seed);
  const double sigma = x == 0.0 ? 0.0 : rng.uniform(0.0, x);
  return {gaussian_smooth(v, sigma), labels, {{"sigma", sigma}}};
}

ShiftedSample apply_gamma(const Volume& v, const LabelMap& labels, double x, std::uint64_t seed) {
  require_magnitude(x);
  require_same_dims(v, labels);
  Rng rng(seed);
  const double log_gamma = x == 0.0 ? 0.0 : rng.uniform(-x, x);
  return {gamma_correct(v, std::exp(log_gamma)), labels, {{"log_gamma", log_gamma}}};
}

ShiftedSample apply_shift(const Volume& v, const LabelMap& labels, const ShiftSpec& spec) {
  require_magnitude(spec.magnitude);
  const double x = spec.magnitude;
  if (spec.kind == ShiftKind::Compose) {
    ShiftedSample cur{v, labels, {}};
    for (const ShiftSpec& step : spec.steps) {
      ShiftedSample next = apply_shift(cur.volume, cur.labels, step);
      cur.volume = std::move(next.volume);
      cur.labels = std::move(next.labels);
      cur.applied.insert(cur.applied.end(), next.applied.begin(), next.applied.end());
    }
    return cur;
  }
  if (!spec.exact) {
    switch (spec.kind) {
      case ShiftKind::Rotation: return apply_rotation(v, labels, x, spec.seed);
      case ShiftKind::Scaling: return apply_scaling(v, labels, x, spec.seed);
      case ShiftKind::GaussianSmooth: return apply_gaussian_smooth(v, labels, x, spec.seed);
      case ShiftKind::GammaCorrection: return apply_gamma(v, labels, x, spec.seed);
      default: break;
    }
  }
  switch (spec.kind) {
    case ShiftKind::Rotation: return rotate(v, labels, {x, x, x});
    case ShiftKind::Scaling: return scale(v, labels, {std::exp(x), std::exp(x), std::exp(x)});
    case ShiftKind::GaussianSmooth: return {gaussian_smooth(v, x), labels, {{"sigma", x}}};
    case ShiftKind::GammaCorrection: return {gamma_correct(v, std::exp(x)), labels, {{"log_gamma", x}}};
    default: break;
  }
  throw ConfigError("unsupported shift kind");
}

Volume histogram_match(const Volume& target, const Volume& reference, std::size_t n_bins) {
  if (target.values.empty() || reference.values.empty()) throw ShapeError("histogram matching of an empty volume");
  if (n_bins < 2) throw ConfigError("histogram matching needs at least 2 bins");
  const auto [r_lo_it, r_hi_it] = std::minmax_element(reference.values.begin(), reference.values.end());
  const double r_lo = *r_lo_it, r_hi = *r_hi_it;
  if (!(r_hi > r_lo)) throw ConfigError("histogram matching: reference has constant intensity");
  const auto [t_lo_it, t_hi_it] = std::minmax_element(target.values.begin(), target.values.end());
  const double t_lo = *t_lo_it, t_hi = *t_hi_it;

  const auto cumulative = [n_bins](const std::vector<float>& vals, double lo, double width) {
    std::vector<double> cdf(n_bins, 0.0);
    for (float x : vals) {
      const auto b = std::min(static_cast<std::size_t>(std::max(0.0, (x - lo) / width)), n_bins - 1);
      cdf[b] += 1.0;
    }
    double run = 0.0;
    for (double& c : cdf) {
      run += c;
      c = run / static_cast<double>(vals.size());
    }
    cdf.back() = 1.0;
    return cdf;
  };

  const double r_width = (r_hi - r_lo) / static_cast<double>(n_bins);
  const std::vector<double> r_cdf = cumulative(reference.values, r_lo, r_width);
  const auto invert = [&](double q) {
    const auto it = std::lower_bound(r_cdf.begin(), r_cdf.end(), q);
    const std::size_t j = std::min(static_cast<std::size_t>(it - r_cdf.begin()), n_bins - 1);
    const double prev = j == 0 ? 0.0 : r_cdf[j - 1];
    const double mass = r_cdf[j] - prev;
    const double frac = mass > 0.0 ? std::clamp((q - prev) / mass, 0.0, 1.0) : 0.0;
    return std::clamp(r_lo + (static_cast<double>(j) + frac) * r_width, r_lo, r_hi);
  };

  Volume out(target.dims, target.voxel_size_mm);
  if (!(t_hi > t_lo)) {
    std::fill(out.values.begin(), out.values.end(), static_cast<float>(invert(0.5)));
    return out;
  }
  const double t_width = (t_hi - t_lo) / static_cast<double>(n_bins);
  const std::vector<double> t_cdf = cumulative(target.values, t_lo, t_width);
  for (std::size_t i = 0; i < target.values.size(); ++i) {
    const double pos = (target.values[i] - t_lo) / t_width;
    const std::size_t b = std::min(static_cast<std::size_t>(std::max(0.0, pos)), n_bins - 1);
    const double frac = std::clamp(pos - static_cast<double>(b), 0.0, 1.0);
    const double prev = b == 0 ? 0.0 : t_cdf[b - 1];
    const double q = prev + frac * (t_cdf[b] - prev);
    out.values[i] = static_cast<float>(invert(q));
  }
  return out;
}

}  // namespace tta
