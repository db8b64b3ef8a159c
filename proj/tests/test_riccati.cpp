#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rmfg/riccati.hpp"

using namespace rmfg;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }

Vec Vec2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

StepSeries constant_series(std::size_t n, const Mat& m) { return StepSeries::left_constant(std::vector<Mat>(n, m)); }

RoughPathPtr time_path(std::size_t N) {
  return std::make_shared<const RoughPath>(
      canonical_lift([](double t) { return Vec::Constant(1, t); }, TimeGrid::uniform(1.0, N), 4));
}

// y' = k y^2 - s y - q on [0,1] with y(1) = yT, solved through the roots of
// k y^2 - s y - q: (y - r1)/(y - r2) = c exp(k (r1 - r2) t).
double scalar_riccati(double k, double s, double q, double yT, double t) {
  const double disc = std::sqrt(s * s + 4.0 * k * q);
  const double r1 = (s + disc) / (2.0 * k), r2 = (s - disc) / (2.0 * k);
  const double w = (yT - r1) / (yT - r2) * std::exp(-k * (r1 - r2) * (1.0 - t));
  return (r1 - r2 * w) / (1.0 - w);
}

struct ScalarModel {
  double a = 0.0, b = 1.0, c = 0.0, q = 1.0, qbar = 0.0, r = 1.0, s = 0.0, qT = 0.0;
};

DriftSpec scalar_drift(std::size_t n, const ScalarModel& m) {
  DriftSpec d;
  d.A.assign(n, m1(m.a));
  d.B.assign(n, m1(m.b));
  d.C.assign(n, m1(m.c));
  d.Sigma.assign(n, m1(0.0));
  return d;
}

CostSpec scalar_cost(std::size_t n, const ScalarModel& m) {
  CostSpec c;
  c.Q.assign(n, m1(m.q));
  c.Qbar.assign(n, m1(m.qbar));
  c.R.assign(n, m1(m.r));
  c.S.assign(n, m1(m.s));
  c.Q_T = m1(m.qT);
  c.Qbar_T = m1(0.0);
  c.S_T = m1(0.0);
  return c;
}

// A two-dimensional instance with coupled, non-diagonal data.
struct MatrixModel {
  DriftSpec drift;
  CostSpec cost;
  explicit MatrixModel(std::size_t n) {
    Mat A(2, 2), B(2, 1), C(2, 2), Q(2, 2), Qb(2, 2);
    A << 0.1, 0.3, -0.2, 0.0;
    B << 1.0, 0.5;
    C << 0.05, 0.0, 0.0, 0.05;
    Q << 1.0, 0.2, 0.2, 0.5;
    Qb << 0.3, 0.0, 0.0, 0.1;
    drift.A.assign(n, A);
    drift.B.assign(n, B);
    drift.C.assign(n, C);
    drift.Sigma.assign(n, Mat::Identity(2, 2) * 0.2);
    cost.Q.assign(n, Q);
    cost.Qbar.assign(n, Qb);
    cost.R.assign(n, m1(1.5));
    cost.S.assign(n, Mat::Zero(2, 2));
    cost.Q_T = Mat::Identity(2, 2) * 0.5;
    cost.Qbar_T = Mat::Zero(2, 2);
    cost.S_T = Mat::Zero(2, 2);
  }
};

// One Brownian sample path read on every grid of a dyadic family.
struct SharedBrownian {
  TimeGrid fine;
  Mat samples;
  SharedBrownian(std::uint64_t seed, std::size_t p, std::size_t n_max, std::size_t r)
      : fine(TimeGrid::uniform(1.0, n_max).refined(r)), samples(brownian_samples(seed, p, TimeGrid::uniform(1.0, n_max), r)) {}
  RoughPathPtr on(std::size_t N) const {
    return std::make_shared<const RoughPath>(canonical_lift(fine, samples, TimeGrid::uniform(1.0, N)));
  }
};

struct RoughSolution {
  EResult e;
  StepSeries ptilde, pbar;
};

RoughSolution solve_rough(const DriftSpec& d, CostSpec cost, const RoughCoefficient& A1, const RoughCoefficient& C1) {
  const TimeGrid& g = A1.rough().grid();
  validate_cost(cost, g, d.A[0].rows(), d.B[0].cols());
  RoughSolution out;
  out.e = solve_e_equation(StepSeries::left_constant(d.C), C1);
  out.ptilde = solve_symmetric_rough_riccati(g, d, cost, A1 + C1, ScalarSeries(out.e.lambda));
  out.pbar = assemble_pbar(out.e, out.ptilde);
  return out;
}

double sup_on_coarse_nodes(const StepSeries& coarse, const StepSeries& fine) {
  const std::size_t f = (fine.size() - 1) / (coarse.size() - 1);
  double worst = 0.0;
  for (std::size_t k = 0; k < coarse.size(); ++k)
    worst = std::max(worst, (coarse.node(k) - fine.node(k * f)).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace

TEST(ClassicalRiccati, TanhOracle) {
  const TimeGrid g = TimeGrid::uniform(1.0, 1024);
  const auto one = constant_series(g.size(), m1(1.0));
  const StepSeries P = solve_classical_riccati(g, constant_series(g.size(), m1(0.0)), one, one, one, m1(0.0));
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(P.node(k)(0, 0), std::tanh(1.0 - g[k]), 1e-8);
  for (std::size_t k = 0; k + 1 < g.size(); ++k) EXPECT_NEAR(P.mid(k)(0, 0), std::tanh(1.0 - 0.5 * (g[k] + g[k + 1])), 1e-8);
}

TEST(ClassicalRiccati, NoSourceNoTerminalStaysZero) {
  const TimeGrid g = TimeGrid::uniform(1.0, 64);
  Mat A(2, 2);
  A << 0.4, -1.0, 2.0, 0.1;
  const StepSeries P = solve_classical_riccati(g, constant_series(g.size(), A), constant_series(g.size(), Mat::Identity(2, 2)),
                                               constant_series(g.size(), Mat::Identity(2, 2)),
                                               constant_series(g.size(), Mat::Zero(2, 2)), Mat::Zero(2, 2));
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(P.node(k), Mat::Zero(2, 2));
}

// Diagonal data decouples into scalar equations y' = y^2 - 2 a y - 1.
TEST(ClassicalRiccati, DiagonalFamilyMatchesScalarOracle) {
  const TimeGrid g = TimeGrid::uniform(1.0, 1024);
  const std::size_t n = g.size();
  const Mat A = Vec2(0.3, -0.5).asDiagonal();
  const Mat I = Mat::Identity(2, 2);
  const Mat G = Vec2(0.0, 0.4).asDiagonal();
  const StepSeries P = solve_classical_riccati(g, constant_series(n, A), constant_series(n, I), constant_series(n, I),
                                               constant_series(n, I), G);
  for (std::size_t k = 0; k < n; ++k) {
    EXPECT_NEAR(P.node(k)(0, 0), scalar_riccati(1.0, 0.6, 1.0, 0.0, g[k]), 1e-8);
    EXPECT_NEAR(P.node(k)(1, 1), scalar_riccati(1.0, -1.0, 1.0, 0.4, g[k]), 1e-8);
    EXPECT_EQ(P.node(k)(0, 1), 0.0);
  }
}

TEST(ClassicalRiccati, SingularWeightIsANumericalError) {
  const TimeGrid g = TimeGrid::uniform(1.0, 8);
  const auto one = constant_series(g.size(), m1(1.0));
  EXPECT_THROW(solve_classical_riccati(g, one, one, constant_series(g.size(), m1(0.0)), one, m1(0.0)), NumericalError);
}

TEST(ClassicalRiccati, BlowUpIsReported) {
  // y' = -y^2 - 1 backward from y(1) = 0 reaches infinity at t = 1 - pi/2.
  const TimeGrid g = TimeGrid::uniform(3.0, 3000);
  const auto one = constant_series(g.size(), m1(1.0));
  EXPECT_THROW(solve_classical_riccati(g, constant_series(g.size(), m1(0.0)), one, constant_series(g.size(), m1(-1.0)), one,
                                       m1(0.0)),
               NumericalError);
}

TEST(PiEquation, ZeroForcingGivesZero) {
  const TimeGrid g = TimeGrid::uniform(1.0, 64);
  const auto one = constant_series(g.size(), m1(1.0)), zero = constant_series(g.size(), m1(0.0));
  const StepSeries P = solve_classical_riccati(g, zero, one, one, one, m1(0.0));
  const StepSeries Pi = solve_Pi(g, P, zero, one, zero, zero, Vec::Zero(1));
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(Pi.node(k)(0, 0), 0.0);
}

TEST(PiEquation, LinearInForcingAndTerminal) {
  const TimeGrid g = TimeGrid::uniform(1.0, 256);
  const std::size_t n = g.size();
  Mat A(2, 2);
  A << 0.2, 0.5, -0.3, 0.1;
  const auto I = constant_series(n, Mat::Identity(2, 2));
  const StepSeries P = solve_classical_riccati(g, constant_series(n, A), I, I, I, Mat::Identity(2, 2));
  std::vector<Mat> D(n), F(n), D2(n), F2(n);
  for (std::size_t k = 0; k < n; ++k) {
    D[k] = Vec2(std::sin(3.0 * g[k]), 1.0 - g[k]);
    F[k] = Vec2(g[k] * g[k], -0.5);
    D2[k] = 2.0 * D[k];
    F2[k] = 2.0 * F[k];
  }
  const Vec term = Vec2(0.7, -0.2);
  const StepSeries Pi = solve_Pi(g, P, constant_series(n, A), I, StepSeries::left_constant(D), StepSeries::left_constant(F), term);
  const StepSeries Pi2 =
      solve_Pi(g, P, constant_series(n, A), I, StepSeries::left_constant(D2), StepSeries::left_constant(F2), 2.0 * term);
  for (std::size_t k = 0; k < n; ++k) EXPECT_LE((Pi2.node(k) - 2.0 * Pi.node(k)).cwiseAbs().maxCoeff(), 1e-14);
}

// With frozen P = p the equation is pi' = -(a - p b) pi - (p d + f).
TEST(PiEquation, VariationOfConstantsOracle) {
  const TimeGrid g = TimeGrid::uniform(1.0, 1024);
  const std::size_t n = g.size();
  const double a = 0.4, p = 0.8, b = 1.5, d = 0.3, f = -0.6, piT = 1.2;
  const StepSeries Pi = solve_Pi(g, constant_series(n, m1(p)), constant_series(n, m1(a)), constant_series(n, m1(b)),
                                 constant_series(n, m1(d)), constant_series(n, m1(f)), Vec::Constant(1, piT));
  const double c = a - p * b, src = p * d + f;
  for (std::size_t k = 0; k < n; ++k)
    EXPECT_NEAR(Pi.node(k)(0, 0), (piT + src / c) * std::exp(c * (1.0 - g[k])) - src / c, 1e-8);
}

TEST(SymmetricRoughRiccati, ZeroRoughPartReducesToClassical) {
  const std::size_t N = 512, n = N + 1;
  const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(4, 1, TimeGrid::uniform(1.0, N), 4));
  MatrixModel m(n);
  validate_cost(m.cost, rp->grid(), 2, 1);
  const StepSeries pt = solve_symmetric_rough_riccati(rp->grid(), m.drift, m.cost, RoughCoefficient::zero(rp, 2), ScalarSeries::ones(n));
  std::vector<Mat> lin(n), src(n);
  for (std::size_t k = 0; k < n; ++k) {
    lin[k] = m.drift.A[k] + m.drift.C[k];
    src[k] = m.cost.tilde(k);
  }
  const StepSeries P = solve_classical_riccati(rp->grid(), StepSeries::left_constant(lin), StepSeries::left_constant(m.drift.B),
                                               StepSeries::left_constant(m.cost.R), StepSeries::left_constant(src),
                                               m.cost.tilde_T());
  for (std::size_t k = 0; k < n; ++k) EXPECT_LE((pt.node(k) - P.node(k)).cwiseAbs().maxCoeff(), 1e-10);
}

// Along eta = t a constant rough coefficient c is just an extra drift c.
TEST(SymmetricRoughRiccati, SmoothPathAbsorbsIntoDrift) {
  const auto rp = time_path(1024);
  const std::size_t n = rp->grid().size();
  ScalarModel sm;
  sm.a = 0.1;
  sm.qT = 0.5;
  const double c = 0.2;
  const CostSpec cost = scalar_cost(n, sm);
  const StepSeries pt = solve_symmetric_rough_riccati(rp->grid(), scalar_drift(n, sm), cost,
                                                      RoughCoefficient::constant(rp, {m1(c)}), ScalarSeries::ones(n));
  const auto one = constant_series(n, m1(1.0));
  const StepSeries P = solve_classical_riccati(rp->grid(), constant_series(n, m1(sm.a + c)), one, one, one, m1(sm.qT));
  for (std::size_t k = 0; k < n; ++k) {
    EXPECT_NEAR(pt.node(k)(0, 0), P.node(k)(0, 0), 1e-7);
    EXPECT_NEAR(pt.node(k)(0, 0), scalar_riccati(1.0, 2.0 * (sm.a + c), 1.0, sm.qT, rp->grid()[k]), 1e-7);
  }
}

TEST(SymmetricRoughRiccati, BrownianSelfConvergence) {
  std::vector<double> h(4), err(4, 0.0);
  ScalarModel sm;
  sm.a = 0.1;
  sm.qT = 0.5;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const SharedBrownian sb(1300 + seed, 1, 4096, 2);
    const auto solve = [&](std::size_t N) {
      const auto rp = sb.on(N);
      return solve_symmetric_rough_riccati(rp->grid(), scalar_drift(N + 1, sm), scalar_cost(N + 1, sm),
                                           RoughCoefficient::constant(rp, {m1(0.5)}), ScalarSeries::ones(N + 1))
          .node(0)(0, 0);
    };
    const double ref = solve(4096);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t N = std::size_t{256} << i;
      h[i] = 1.0 / N;
      err[i] += std::fabs(solve(N) - ref) / 32.0;
    }
  }
  EXPECT_GE(loglog_slope(h, err), 3 * 0.4 - 1 - 0.1);
}

// Symmetric and positive semidefinite along every node on a set of instances.
TEST(SymmetricRoughRiccati, SymmetricAndPositiveSemidefinite) {
  const std::size_t N = 512, n = N + 1;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(50 + seed, 2, TimeGrid::uniform(1.0, N), 4));
    MatrixModel m(n);
    Mat g0(2, 2), g1(2, 2);
    g0 << 0.3, 0.1 * static_cast<double>(seed), -0.2, 0.0;
    g1 << 0.0, 0.2, 0.2, -0.4;
    const RoughCoefficient A1 = RoughCoefficient::constant(rp, {g0, g1});
    const RoughCoefficient C1 = RoughCoefficient::constant(rp, {Mat(0.1 * Mat::Identity(2, 2)), Mat::Zero(2, 2)});
    const RoughSolution sol = solve_rough(m.drift, m.cost, A1, C1);
    ASSERT_TRUE(sol.e.s4r);
    for (std::size_t k = 0; k < n; ++k) {
      const Mat& p = sol.ptilde.node(k);
      const double scale = p.cwiseAbs().maxCoeff();
      EXPECT_LE((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, scale));
      EXPECT_GE(detail::min_sym_eigen(p), -1e-9 * scale) << "seed " << seed << " node " << k;
    }
  }
}

TEST(SymmetricRoughRiccati, LargerStateWeightDoesNotLowerValue) {
  const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(21, 1, TimeGrid::uniform(1.0, 512), 4));
  const std::size_t n = rp->grid().size();
  const RoughCoefficient G = RoughCoefficient::constant(rp, {m1(0.4)});
  double prev = -1.0;
  for (double q : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    ScalarModel sm;
    sm.q = q;
    sm.qT = 0.3;
    const double p0 =
        solve_symmetric_rough_riccati(rp->grid(), scalar_drift(n, sm), scalar_cost(n, sm), G, ScalarSeries::ones(n)).node(0)(0, 0);
    EXPECT_GE(p0, prev);
    prev = p0;
  }
}

TEST(SymmetricRoughRiccati, LipschitzInThePath) {
  const std::size_t N = 512, n = N + 1;
  const SharedBrownian sb(77, 1, N, 4);
  const auto base = sb.on(N);
  ScalarModel sm;
  sm.qT = 0.5;
  const auto solve = [&](const RoughPathPtr& rp) {
    return solve_symmetric_rough_riccati(rp->grid(), scalar_drift(n, sm), scalar_cost(n, sm),
                                         RoughCoefficient::constant(rp, {m1(0.5)}), ScalarSeries::ones(n));
  };
  const StepSeries p0 = solve(base);
  double lo = 1e300, hi = 0.0;
  for (double eps : {3e-4, 1e-3, 3e-3, 1e-2}) {
    Mat s = sb.samples;
    for (Eigen::Index j = 0; j < s.cols(); ++j) s(0, j) += eps * std::sin(3.0 * sb.fine[static_cast<std::size_t>(j)]);
    const auto bumped = std::make_shared<const RoughPath>(canonical_lift(sb.fine, s, TimeGrid::uniform(1.0, N)));
    const double rho = rough_metric(*base, *bumped);
    ASSERT_GE(rho, 1e-4);
    ASSERT_LE(rho, 1e-1);
    const double ratio = sup_on_coarse_nodes(solve(bumped), p0) / rho;
    ASSERT_TRUE(std::isfinite(ratio));
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  EXPECT_GT(lo, 0.0);
  EXPECT_LE(hi, 10.0 * lo);
}

TEST(AssemblePbar, IdentityEGivesPtilde) {
  const auto rp = time_path(64);
  const std::size_t n = rp->grid().size();
  ScalarModel sm;
  const StepSeries pt = solve_symmetric_rough_riccati(rp->grid(), scalar_drift(n, sm), scalar_cost(n, sm),
                                                      RoughCoefficient::constant(rp, {m1(0.3)}), ScalarSeries::ones(n));
  EResult e;
  e.e.assign(n, m1(1.0));
  e.lambda.assign(n, 1.0);
  e.s4r = true;
  const StepSeries pb = assemble_pbar(e, pt);
  for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(pb.node(k), pt.node(k));
  for (std::size_t k = 0; k + 1 < n; ++k) EXPECT_EQ(pb.mid(k), pt.mid(k));
}

TEST(AssemblePbar, ZeroCostGivesZero) {
  const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(8, 2, TimeGrid::uniform(1.0, 128), 4));
  const std::size_t n = rp->grid().size();
  MatrixModel m(n);
  for (std::size_t k = 0; k < n; ++k) {
    m.cost.Q[k].setZero();
    m.cost.Qbar[k].setZero();
  }
  m.cost.Q_T.setZero();
  const RoughSolution sol = solve_rough(m.drift, m.cost, RoughCoefficient::constant(rp, {Mat(0.2 * Mat::Ones(2, 2)), Mat::Zero(2, 2)}),
                                        RoughCoefficient::constant(rp, {Mat(0.3 * Mat::Identity(2, 2)), Mat::Zero(2, 2)}));
  for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(sol.pbar.node(k), Mat::Zero(2, 2));
}

// e = lambda Id with C = l1 and C1 = l2; along eta = t the non-symmetric
// equation is the scalar ODE  -pbar' = (2a + l1 + 2 a1 + l2) pbar - pbar^2 b^2/r + qtilde.
TEST(AssemblePbar, ScalarFamilyMatchesDirectOracle) {
  const auto rp = time_path(1024);
  const std::size_t n = rp->grid().size();
  ScalarModel sm;
  sm.a = 0.1;
  sm.c = 0.3;
  sm.qbar = 0.4;
  sm.s = 0.5;
  sm.qT = 0.2;
  const double a1 = 0.2, l2 = -0.25;
  const RoughSolution sol = solve_rough(scalar_drift(n, sm), scalar_cost(n, sm), RoughCoefficient::constant(rp, {m1(a1)}),
                                        RoughCoefficient::constant(rp, {m1(l2)}));
  const double qt = sm.q + sm.qbar - sm.qbar * sm.s, s = 2.0 * sm.a + sm.c + 2.0 * a1 + l2;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = rp->grid()[k];
    EXPECT_NEAR(sol.e.lambda[k], std::exp((sm.c + l2) * t), 1e-8);
    EXPECT_NEAR(sol.pbar.node(k)(0, 0), scalar_riccati(sm.b * sm.b / sm.r, s, qt, sm.qT, t), 1e-6);
  }
}

// Residuals of the assembled solution against the scheme's own refinement error.
TEST(AssemblePbar, ResidualsWithinTenTimesSchemeError) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const SharedBrownian sb(600 + seed, 2, 2048, 2);
    const auto run = [&](std::size_t N) {
      const auto rp = sb.on(N);
      MatrixModel m(N + 1);
      Mat g0(2, 2), g1(2, 2);
      g0 << 0.2, 0.1, 0.0, -0.1;
      g1 << 0.0, 0.3, -0.3, 0.0;
      const RoughCoefficient A1 = RoughCoefficient::constant(rp, {g0, g1});
      const RoughCoefficient C1 = RoughCoefficient::constant(rp, {Mat(0.2 * Mat::Identity(2, 2)), Mat(-0.1 * Mat::Identity(2, 2))});
      RoughSolution sol = solve_rough(m.drift, m.cost, A1, C1);
      return std::make_pair(sol.pbar, rriccati_residual(sol.pbar, m.drift, m.cost, A1, C1));
    };
    const auto [pb, res] = run(1024);
    const double scheme = sup_on_coarse_nodes(pb, run(2048).first);
    const double scale = pb.node(0).cwiseAbs().maxCoeff();
    EXPECT_LE(res.terminal, 1e-12 * scale);
    EXPECT_LE(res.integrated, 10.0 * scheme) << "seed " << seed << " scheme error " << scheme;
  }
}

TEST(CostValidation, RejectsIndefiniteWeights) {
  const TimeGrid g = TimeGrid::uniform(1.0, 4);
  ScalarModel sm;
  CostSpec c = scalar_cost(g.size(), sm);
  c.R[2] = m1(0.5);
  c.lambda = 1.0;
  try {
    validate_cost(c, g, 1, 1);
    FAIL() << "expected an assumption error";
  } catch (const AssumptionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("(S3)"), std::string::npos) << what;
    EXPECT_NE(what.find("t=0.5"), std::string::npos) << what;
  }
  CostSpec neg = scalar_cost(g.size(), sm);
  neg.Q[1] = m1(-0.1);
  EXPECT_THROW(validate_cost(neg, g, 1, 1), AssumptionError);
  CostSpec lam = scalar_cost(g.size(), sm);
  lam.lambda = 0.0;
  EXPECT_THROW(validate_cost(lam, g, 1, 1), AssumptionError);
}

TEST(CostValidation, SymmetrisesOnIngest) {
  const TimeGrid g = TimeGrid::uniform(1.0, 2);
  MatrixModel m(g.size());
  m.cost.Q[0](0, 1) = 0.4;
  m.cost.Q[0](1, 0) = 0.0;
  validate_cost(m.cost, g, 2, 1);
  EXPECT_EQ(m.cost.Q[0](0, 1), 0.2);
  EXPECT_EQ(m.cost.Q[0](1, 0), 0.2);
}
