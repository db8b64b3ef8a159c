#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "rmfg/rough_path.hpp"

using namespace rmfg;

namespace {

Vec scalar(double v) { return Vec::Constant(1, v); }

RoughPath time_path(const TimeGrid& g, double slope = 1.0) {
  return canonical_lift([slope](double t) { return scalar(slope * t); }, g, 4);
}

}  // namespace

// Reference vectors published with the Random123 library.
TEST(Philox, KnownAnswerVectors) {
  using W = std::array<std::uint32_t, 4>;
  EXPECT_EQ(philox4x32({0, 0, 0, 0}, {0, 0}), (W{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
            (W{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
            (W{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(NormalQuantile, MatchesBoostIncludingTails) {
  const boost::math::normal nd;
  const RandomStream s(3, 4);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100000; ++i) {
    double u = s.uniform(i);
    if (i % 3 == 0) u = std::pow(u, 20);
    if (i % 3 == 1) u = 1.0 - 0.999 * std::pow(u, 20);
    if (u <= 0.0 || u >= 1.0) continue;
    const double ref = boost::math::quantile(nd, u);
    worst = std::max(worst, std::fabs(normal_quantile(u) - ref) / std::max(1.0, std::fabs(ref)));
  }
  EXPECT_LT(worst, 1e-14);
}

TEST(RandomStream, DrawsArePureFunctionsOfTheCounter) {
  const RandomStream a(17, 5), b(17, 5), other(17, 6);
  std::vector<double> bulk(37);
  a.normals(11, bulk.size(), bulk.begin());
  for (std::size_t i = 0; i < bulk.size(); ++i) {
    EXPECT_EQ(bulk[i], b.normal(11 + i));
    EXPECT_NE(bulk[i], other.normal(11 + i));
  }
  for (std::uint64_t n = 0; n < 1000; ++n) {
    const double u = a.uniform(n);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(RandomStream, NormalMoments) {
  const RandomStream s(99, 0);
  const std::size_t n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = s.normal(i);
    m1 += z;
    m2 += z * z;
  }
  m1 /= n;
  m2 /= n;
  EXPECT_LT(std::fabs(m1), 4.0 / std::sqrt(double(n)));
  EXPECT_LT(std::fabs(m2 - 1.0), 4.0 * std::sqrt(2.0 / n));
}

TEST(TimeGrid, RefineAndCoarsenRoundTrip) {
  const TimeGrid g = TimeGrid::uniform(2.0, 8);
  EXPECT_EQ(g.size(), 9u);
  EXPECT_DOUBLE_EQ(g.horizon(), 2.0);
  const TimeGrid f = g.refined(4);
  EXPECT_EQ(f.steps(), 32u);
  EXPECT_EQ(f.coarsened(4), g);
  EXPECT_THROW(g.coarsened(3), ConfigError);
  EXPECT_THROW(g.refined(0), ConfigError);
}

TEST(CanonicalLift, ConstantPathHasZeroAreas) {
  const TimeGrid g = TimeGrid::uniform(1.0, 32);
  const RoughPath rp = canonical_lift([](double) { return Vec::Constant(3, -1.5); }, g, 8);
  EXPECT_TRUE((rp.values().array() == -1.5).all());
  for (const auto& a : rp.areas()) EXPECT_TRUE(a.isZero(0.0));
}

TEST(CanonicalLift, TimePathAreaIsHalfSquare) {
  const TimeGrid g({0.0, 0.1, 0.35, 0.4, 0.8, 1.0});
  const RoughPath rp = canonical_lift([](double t) { return scalar(t); }, g, 3);
  for (std::size_t s = 0; s < g.size(); ++s)
    for (std::size_t t = s; t < g.size(); ++t) {
      const double h = g[t] - g[s];
      EXPECT_NEAR(rp.area(s, t)(0, 0), 0.5 * h * h, 1e-15);
    }
}

// Iterated integrals of (cos, sin) over [0, pi]: A12 = pi/2, A21 = -pi/2,
// A11 = (cos pi - cos 0)^2 / 2 = 2, A22 = 0.
TEST(CanonicalLift, CircleAreaMatchesClosedForm) {
  const TimeGrid g = TimeGrid::uniform(std::numbers::pi, 16);
  const RoughPath rp = canonical_lift(
      [](double t) {
        Vec v(2);
        v << std::cos(t), std::sin(t);
        return v;
      },
      g, 256);
  const Mat a = rp.area(0, 16);
  EXPECT_NEAR(a(0, 1), std::numbers::pi / 2, 1e-6);
  EXPECT_NEAR(a(1, 0), -std::numbers::pi / 2, 1e-6);
  EXPECT_NEAR(a(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(a(1, 1), 0.0, 1e-12);
}

TEST(CanonicalLift, RefinementConvergesAtSecondOrder) {
  const TimeGrid g = TimeGrid::uniform(std::numbers::pi, 4);
  const auto circle = [](double t) {
    Vec v(2);
    v << std::cos(t), std::sin(t);
    return v;
  };
  std::vector<double> r, diff;
  for (std::size_t k = 4; k <= 128; k *= 2) {
    const double lo = canonical_lift(circle, g, k).area(0, 4)(0, 1);
    const double hi = canonical_lift(circle, g, 2 * k).area(0, 4)(0, 1);
    r.push_back(static_cast<double>(k));
    diff.push_back(std::fabs(hi - lo));
  }
  // least-squares slope of log diff against log r
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    mx += std::log(r[i]);
    my += std::log(diff[i]);
  }
  mx /= r.size();
  my /= r.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    sxy += (std::log(r[i]) - mx) * (std::log(diff[i]) - my);
    sxx += (std::log(r[i]) - mx) * (std::log(r[i]) - mx);
  }
  EXPECT_GE(-sxy / sxx, 1.9);
}

TEST(CanonicalLift, RejectsMisalignedTargets) {
  const TimeGrid fine = TimeGrid::uniform(1.0, 10);
  const TimeGrid target = TimeGrid::uniform(1.0, 4);  // 0.25 is not a fine node
  EXPECT_THROW(canonical_lift(fine, Mat::Zero(1, 11), target), ConfigError);
  EXPECT_THROW(canonical_lift(fine, Mat::Zero(1, 7), TimeGrid::uniform(1.0, 5)), ConfigError);
}

TEST(BrownianLift, ScalarAreaIsHalfSquaredIncrement) {
  const RoughPath rp = brownian_stratonovich_lift(5, 1, TimeGrid::uniform(1.0, 256), 16);
  for (std::size_t k = 0; k < rp.steps(); ++k) {
    const double dx = rp.step_increment(k)(0);
    EXPECT_EQ(rp.step_area(k)(0, 0), 0.5 * dx * dx);
  }
}

TEST(BrownianLift, SameSeedIsBitIdentical) {
  const TimeGrid g = TimeGrid::uniform(1.0, 128);
  EXPECT_TRUE(brownian_stratonovich_lift(42, 3, g, 8) == brownian_stratonovich_lift(42, 3, g, 8));
  EXPECT_FALSE(brownian_stratonovich_lift(42, 3, g, 8) == brownian_stratonovich_lift(43, 3, g, 8));
}

TEST(BrownianLift, IncrementVariance) {
  const TimeGrid g = TimeGrid::uniform(1.0, 1024);
  const RoughPath rp = brownian_stratonovich_lift(8, 2, g, 4);
  double ss = 0.0;
  for (std::size_t k = 0; k < rp.steps(); ++k) ss += rp.step_increment(k).squaredNorm();
  const double per = ss / (2.0 * rp.steps() * g.dt(0));
  EXPECT_NEAR(per, 1.0, 4.0 * std::sqrt(2.0 / (2.0 * rp.steps())));
}

// Over [0,1] the Stratonovich area int W^1 dW^2 has variance 1/2 and the
// Levy area (A12 - A21)/2 has variance 1/4; both have mean zero. The lift
// resolves 16384 fine steps, so the discretisation bias is below 1e-4.
TEST(BrownianLift, LevyAreaMoments) {
  const TimeGrid g = TimeGrid::uniform(1.0, 1024);
  const std::size_t n = 10000;
  double s_a = 0, s_aa = 0, s_l = 0, s_ll = 0;
  for (std::size_t seed = 0; seed < n; ++seed) {
    const RoughPath rp = brownian_stratonovich_lift(100000 + seed, 2, g, 16);
    const Mat a = rp.area(0, g.steps());
    const double levy = 0.5 * (a(0, 1) - a(1, 0));
    s_a += a(0, 1);
    s_aa += a(0, 1) * a(0, 1);
    s_l += levy;
    s_ll += levy * levy;
  }
  const double mean_l = s_l / n, var_l = s_ll / n - mean_l * mean_l;
  const double mean_a = s_a / n, var_a = s_aa / n - mean_a * mean_a;
  EXPECT_LT(std::fabs(mean_l), 4.0 * std::sqrt(var_l / n));
  EXPECT_LT(std::fabs(var_a - 0.5) / 0.5, 0.05);
  EXPECT_LT(std::fabs(var_l - 0.25) / 0.25, 0.05);
}

TEST(Chen, ReconstructedAreasAreMultiplicative) {
  const TimeGrid g = TimeGrid::uniform(1.0, 64);
  for (std::size_t p = 1; p <= 3; ++p) {
    const RoughPath rp = brownian_stratonovich_lift(7 + p, p, g, 8);
    const double scale = chen_scale(rp);
    EXPECT_LE(chen_residual(rp), 1e-12 * scale);
    EXPECT_LE(chen_residual(rp), chen_residual_bound(rp) + 1e-300);
    EXPECT_LE(geometric_residual(rp), 1e-10);
  }
  EXPECT_EQ(chen_residual(zero_rough_path(g, 2)), 0.0);
  EXPECT_LE(chen_residual(time_path(g)), 1e-12 * chen_scale(time_path(g)));
}

TEST(Chen, ManualTripleCheck) {
  const TimeGrid g = TimeGrid::uniform(1.0, 40);
  const RoughPath rp = brownian_stratonovich_lift(31, 2, g, 8);
  for (std::size_t s : {0u, 3u, 11u})
    for (std::size_t u : {12u, 20u})
      for (std::size_t t : {21u, 33u, 40u}) {
        const Mat lhs = rp.area(s, t);
        const Mat rhs = rp.area(s, u) + rp.area(u, t) + rp.increment(s, u) * rp.increment(u, t).transpose();
        EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-13);
      }
}

TEST(Coarsening, PreservesAreasOfLongIntervals) {
  const TimeGrid g = TimeGrid::uniform(1.0, 64);
  const RoughPath rp = brownian_stratonovich_lift(2, 2, g, 4);
  const RoughPath c = rp.coarsened(8);
  ASSERT_EQ(c.steps(), 8u);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_LE((c.area(k, 8) - rp.area(8 * k, 64)).norm(), 1e-13);
}

TEST(RoughMetric, IdentityAndShift) {
  const TimeGrid g = TimeGrid::uniform(1.0, 48);
  const RoughPath a = brownian_stratonovich_lift(4, 2, g, 8);
  Vec c(2);
  c << 0.3, -0.4;
  EXPECT_EQ(rough_metric(a, a), 0.0);
  EXPECT_NEAR(rough_metric(a, a.shifted(c)), 0.5, 1e-12);  // values are re-rounded after the shift
}

// eta = t against eta = 2t: the increment difference is (t-s) and the area
// difference is (4-1)(t-s)^2/2, so the metric is a sup over all grid pairs.
TEST(RoughMetric, LinearPathsByEnumeration) {
  const TimeGrid g = TimeGrid::uniform(1.0, 32);
  const double gamma = 0.4;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t s = 0; s < g.size(); ++s)
    for (std::size_t t = s + 1; t < g.size(); ++t) {
      const double h = g[t] - g[s];
      s1 = std::max(s1, h / std::pow(h, gamma));
      s2 = std::max(s2, 1.5 * h * h / std::pow(h, 2 * gamma));
    }
  EXPECT_NEAR(rough_metric(time_path(g), time_path(g, 2.0)), s1 + s2, 1e-12);
}

TEST(RoughMetric, RejectsDifferentGrids) {
  EXPECT_THROW(rough_metric(time_path(TimeGrid::uniform(1.0, 8)), time_path(TimeGrid::uniform(1.0, 16))), ConfigError);
}

TEST(RoughPathInput, RejectsBadShapesAndValues) {
  const TimeGrid g = TimeGrid::uniform(1.0, 4);
  EXPECT_THROW(RoughPath(g, Mat::Zero(1, 4), std::vector<Mat>(4, Mat::Zero(1, 1)), 0.4, true), ConfigError);
  EXPECT_THROW(RoughPath(g, Mat::Zero(1, 5), std::vector<Mat>(3, Mat::Zero(1, 1)), 0.4, true), ConfigError);
  EXPECT_THROW(RoughPath(g, Mat::Zero(1, 5), std::vector<Mat>(4, Mat::Zero(1, 1)), 0.6, true), ConfigError);
  Mat bad = Mat::Zero(1, 5);
  bad(0, 2) = std::nan("");
  EXPECT_THROW(RoughPath(g, bad, std::vector<Mat>(4, Mat::Zero(1, 1)), 0.4, true), InputError);
}
