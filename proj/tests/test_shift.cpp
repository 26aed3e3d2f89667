#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "tta/error.hpp"
#include "tta/phantom.hpp"
#include "tta/rng.hpp"
#include "tta/shift.hpp"

using namespace tta;

namespace {

Phantom test_phantom(std::uint64_t seed, std::size_t side = 32) {
  PhantomSpec spec;
  spec.dims = {side, side, side};
  spec.seed = seed;
  return generate_phantom(spec);
}

double applied(const ShiftedSample& s, const std::string& name) {
  for (const auto& [k, v] : s.applied) {
    if (k == name) return v;
  }
  ADD_FAILURE() << "no applied value " << name;
  return 0.0;
}

}  // namespace

TEST(Shift, ZeroMagnitudeIsIdentity) {
  const Phantom p = test_phantom(1, 16);
  for (ShiftKind k : {ShiftKind::Rotation, ShiftKind::Scaling, ShiftKind::GaussianSmooth, ShiftKind::GammaCorrection}) {
    for (bool exact : {false, true}) {
      const ShiftedSample s = apply_shift(p.volume, p.labels, ShiftSpec{k, 0.0, exact, 9, {}});
      EXPECT_EQ(s.volume, p.volume) << to_string(k);
      EXPECT_EQ(s.labels, p.labels) << to_string(k);
    }
  }
}

TEST(Shift, SameSeedSameSample) {
  const Phantom p = test_phantom(2, 16);
  const ShiftedSample a = apply_rotation(p.volume, p.labels, 30.0, 17);
  const ShiftedSample b = apply_rotation(p.volume, p.labels, 30.0, 17);
  const ShiftedSample c = apply_rotation(p.volume, p.labels, 30.0, 18);
  EXPECT_EQ(a.applied, b.applied);
  EXPECT_EQ(a.volume, b.volume);
  EXPECT_NE(a.applied, c.applied);
}

TEST(Shift, SampledValuesStayInRange) {
  const Phantom p = test_phantom(2, 8);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto r = apply_rotation(p.volume, p.labels, 20.0, seed);
    for (const char* a : {"angle_d", "angle_h", "angle_w"}) EXPECT_LE(std::abs(applied(r, a)), 20.0);
    const auto g = apply_gamma(p.volume, p.labels, 0.5, seed);
    EXPECT_LE(std::abs(applied(g, "log_gamma")), 0.5);
    const auto s = apply_gaussian_smooth(p.volume, p.labels, 1.5, seed);
    EXPECT_GE(applied(s, "sigma"), 0.0);
    EXPECT_LE(applied(s, "sigma"), 1.5);
  }
}

TEST(Rotation, NinetyDegreesMapsBoxAnalytically) {
  const std::size_t n = 16;
  const Dims dims{n, n, n};
  Volume v(dims, 0.6f, 0.0f);
  LabelMap l(dims, 0.6f, 0);
  auto in_box = [](std::size_t d, std::size_t h, std::size_t w) {
    return d >= 4 && d <= 11 && h >= 2 && h <= 5 && w >= 9 && w <= 13;
  };
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t w = 0; w < n; ++w) {
        if (in_box(d, h, w)) {
          v.at(d, h, w) = 1.0f;
          l.at(d, h, w) = 1;
        }
      }
  const ShiftedSample s = rotate(v, l, {90.0, 0.0, 0.0});
  // A +90 degree turn in the (h, w) plane sends offset (h, w) to (-w, h), so
  // output (h', w') comes from source (w', -h') about the centre 7.5.
  auto expected = [&](std::size_t d, std::size_t h, std::size_t w) {
    const long sh = static_cast<long>(w), sw = static_cast<long>(n - 1 - h);
    return in_box(d, static_cast<std::size_t>(sh), static_cast<std::size_t>(sw));
  };
  std::size_t mismatches = 0, boundary_only = 0, occupied = 0;
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t w = 0; w < n; ++w) {
        const bool want = expected(d, h, w);
        const bool got = s.labels.at(d, h, w) == 1;
        occupied += got;
        if (want == got) continue;
        ++mismatches;
        // Tolerated only next to the analytic boundary.
        bool near_boundary = false;
        for (int dd = -1; dd <= 1; ++dd)
          for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) {
              const long a = static_cast<long>(d) + dd, b = static_cast<long>(h) + dh, c = static_cast<long>(w) + dw;
              if (a < 0 || b < 0 || c < 0 || a >= static_cast<long>(n) || b >= static_cast<long>(n) ||
                  c >= static_cast<long>(n))
                continue;
              if (expected(a, b, c) != want) near_boundary = true;
            }
        boundary_only += near_boundary;
      }
  EXPECT_EQ(mismatches, boundary_only);
  EXPECT_EQ(occupied, 8u * 4u * 5u);
  EXPECT_NEAR(s.volume.at(7, 3, 3), 1.0f, 1e-5f);  // inside the rotated box
}

TEST(Rotation, LabelsFollowTheSameTransform) {
  const Phantom p = test_phantom(3, 16);
  const ShiftedSample s = apply_rotation(p.volume, p.labels, 25.0, 4);
  const Affine3 inv = rotation_inverse({applied(s, "angle_d"), applied(s, "angle_h"), applied(s, "angle_w")});
  EXPECT_EQ(s.labels, resample_labels(p.labels, inv));
  EXPECT_EQ(s.volume, resample_volume(p.volume, inv));
}

TEST(Scaling, DoublingSphereGivesEightfoldVolume) {
  const std::size_t n = 40;
  const Dims dims{n, n, n};
  Volume v(dims, 0.6f, 0.0f);
  LabelMap l(dims, 0.6f, 0);
  const double c = (n - 1) / 2.0;
  std::size_t before = 0;
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t w = 0; w < n; ++w) {
        const double r2 = (d - c) * (d - c) + (h - c) * (h - c) + (w - c) * (w - c);
        if (r2 <= 36.0) {
          l.at(d, h, w) = 2;
          v.at(d, h, w) = 1.0f;
          ++before;
        }
      }
  const ShiftedSample s = scale(v, l, {2.0, 2.0, 2.0});
  std::size_t after = 0;
  std::set<int> values;
  for (auto x : s.labels.values) {
    after += x == 2;
    values.insert(x);
  }
  EXPECT_NEAR(static_cast<double>(after) / static_cast<double>(before), 8.0, 0.4);
  EXPECT_EQ(values, (std::set<int>{0, 2}));
}

TEST(Scaling, LabelsRemainAPartition) {
  const Phantom p = test_phantom(4, 16);
  const ShiftedSample s = apply_scaling(p.volume, p.labels, 0.3, 6);
  std::set<int> before(p.labels.values.begin(), p.labels.values.end());
  for (auto x : s.labels.values) EXPECT_TRUE(before.count(x));
}

TEST(Smoothing, ImpulseMatchesGaussian) {
  const std::size_t n = 15;
  Volume v(Dims{n, n, n}, 0.6f, 0.0f);
  v.at(7, 7, 7) = 1.0f;
  const Volume out = gaussian_smooth(v, 1.0);
  double norm1d = 0.0;
  for (int k = -3; k <= 3; ++k) norm1d += std::exp(-0.5 * k * k);
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t w = 0; w < n; ++w) {
        const double a = static_cast<double>(d) - 7, b = static_cast<double>(h) - 7, c = static_cast<double>(w) - 7;
        const double r2 = a * a + b * b + c * c;
        const bool in_support = std::abs(a) <= 3 && std::abs(b) <= 3 && std::abs(c) <= 3;
        const double discrete = in_support ? std::exp(-0.5 * r2) / (norm1d * norm1d * norm1d) : 0.0;
        const double continuous = std::exp(-0.5 * r2) / std::pow(2.0 * M_PI, 1.5);
        EXPECT_NEAR(out.at(d, h, w), discrete, 1e-6);
        EXPECT_NEAR(out.at(d, h, w), continuous, 1e-3);
      }
}

TEST(Smoothing, ConstantVolumeUnchangedAndLabelsUntouched) {
  Volume v(Dims{10, 12, 8}, 0.6f, 0.37f);
  const Volume out = gaussian_smooth(v, 1.7);
  for (float x : out.values) EXPECT_NEAR(x, 0.37f, 1e-6f);
  const Phantom p = test_phantom(5, 16);
  EXPECT_EQ(apply_gaussian_smooth(p.volume, p.labels, 2.0, 3).labels, p.labels);
}

TEST(Gamma, PowerAndMonotonicity) {
  Volume v(Dims{1, 1, 3}, 0.6f);
  v.values = {0.0f, 0.5f, 1.0f};
  const Volume g = gamma_correct(v, 2.0);
  EXPECT_NEAR(g.values[1], 0.25f, 1e-7f);
  EXPECT_EQ(g.values[0], 0.0f);
  EXPECT_EQ(g.values[2], 1.0f);

  const Phantom p = test_phantom(6, 16);
  for (double gamma : {0.3, 0.9, 1.0, 2.5}) {
    const Volume out = gamma_correct(p.volume, gamma);
    std::vector<std::size_t> order(p.volume.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p.volume.values[a] < p.volume.values[b]; });
    for (std::size_t i = 1; i < order.size(); ++i) {
      ASSERT_LE(out.values[order[i - 1]], out.values[order[i]]);
    }
  }
  EXPECT_EQ(gamma_correct(p.volume, 1.0), p.volume);
  EXPECT_EQ(apply_gamma(p.volume, p.labels, 1.2, 5).labels, p.labels);
  EXPECT_THROW(gamma_correct(Volume(Dims{2, 2, 2}, 0.6f, 1.0f), 2.0), ConfigError);
}

TEST(Compose, AppliesStepsInOrder) {
  const Phantom p = test_phantom(7, 16);
  ShiftSpec spec{ShiftKind::Compose, 0.0, false, 0, {}};
  spec.steps = {{ShiftKind::GammaCorrection, 0.5, true, 1, {}}, {ShiftKind::GaussianSmooth, 1.0, true, 2, {}}};
  const ShiftedSample s = apply_shift(p.volume, p.labels, spec);
  const Volume expected = gaussian_smooth(gamma_correct(p.volume, std::exp(0.5)), 1.0);
  EXPECT_EQ(s.volume, expected);
  EXPECT_EQ(parse_shift_kind("gamma"), ShiftKind::GammaCorrection);
  EXPECT_THROW(parse_shift_kind("elastic"), ConfigError);
}

TEST(HistogramMatch, FixedPointAndRange) {
  const Phantom p = test_phantom(8);
  const Volume same = histogram_match(p.volume, p.volume);
  const auto [lo, hi] = std::minmax_element(p.volume.values.begin(), p.volume.values.end());
  const double bin = (*hi - *lo) / 1024.0;
  for (std::size_t i = 0; i < same.size(); ++i) ASSERT_NEAR(same.values[i], p.volume.values[i], bin + 1e-6);

  const Phantom q = test_phantom(9);
  const Volume shifted = gamma_correct(q.volume, 3.0);
  const Volume out = histogram_match(shifted, p.volume);
  for (float x : out.values) {
    ASSERT_GE(x, *lo);
    ASSERT_LE(x, *hi);
  }
}

TEST(HistogramMatch, UndoesGammaShift) {
  const Phantom p = test_phantom(10);
  const Volume shifted = gamma_correct(p.volume, std::exp(1.2));
  const Volume matched = histogram_match(shifted, p.volume);
  std::size_t improved = 0;
  for (std::size_t i = 0; i < p.volume.size(); ++i) {
    const double before = std::abs(shifted.values[i] - p.volume.values[i]);
    const double after = std::abs(matched.values[i] - p.volume.values[i]);
    improved += after < before;
  }
  EXPECT_GE(static_cast<double>(improved), 0.95 * static_cast<double>(p.volume.size()));
}

TEST(HistogramMatch, ConstantReferenceIsAnError) {
  const Phantom p = test_phantom(11, 8);
  EXPECT_THROW(histogram_match(p.volume, Volume(p.volume.dims, 0.6f, 2.0f)), ConfigError);
}
