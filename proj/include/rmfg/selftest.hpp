#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "rmfg/stability.hpp"

namespace rmfg {

struct SelfCheck {
  std::string name;
  bool ok = false;
  std::string detail;
};

/// A d-dimensional problem with every coefficient zero except R = Id.
inline ProblemSpec zero_problem(std::size_t N, std::size_t d = 1, RoughPathPtr eta = nullptr) {
  ProblemSpec s;
  s.grid = TimeGrid::uniform(1.0, N);
  s.d = d;
  const std::size_t n = s.grid.size();
  const auto D = static_cast<Eigen::Index>(d);
  if (!eta) eta = std::make_shared<const RoughPath>(zero_rough_path(s.grid, 1));
  s.p = eta->dim();
  const std::vector<Mat> zd(n, Mat::Zero(D, D));
  s.drift = {zd, std::vector<Mat>(n, Mat::Zero(D, 1)), zd, std::vector<Mat>(n, Mat::Zero(D, 1))};
  s.cost.Q = s.cost.Qbar = s.cost.S = zd;
  s.cost.R = std::vector<Mat>(n, Mat::Identity(1, 1));
  s.cost.Q_T = s.cost.Qbar_T = s.cost.S_T = Mat::Zero(D, D);
  s.eta = eta;
  s.A1 = RoughCoefficient::zero(eta, d);
  s.C1 = RoughCoefficient::zero(eta, d);
  s.mean0 = Vec::Ones(D);
  s.cov0 = Mat::Zero(D, D);
  return s;
}

/// The battery of closed-form cases run by the selftest command.
inline std::vector<SelfCheck> run_selftest() {
  std::vector<SelfCheck> out;
  const auto check = [&](const std::string& name, const std::function<double()>& err, double tol) {
    SelfCheck c{name, false, ""};
    try {
      const double e = err();
      c.ok = e <= tol;
      char buf[96];
      std::snprintf(buf, sizeof buf, "error %.3g (tolerance %.3g)", e, tol);
      c.detail = buf;
    } catch (const std::exception& ex) {
      c.detail = std::string("threw: ") + ex.what();
    }
    out.push_back(std::move(c));
  };
  const TimeGrid g = TimeGrid::uniform(1.0, 64);

  check("constant path has zero areas", [&] {
    const RoughPath rp = canonical_lift([](double) { return Vec::Constant(2, 3.0); }, g, 4);
    double e = (rp.values().array() - 3.0).abs().maxCoeff();
    for (const auto& a : rp.areas()) e = std::max(e, a.cwiseAbs().maxCoeff());
    return e;
  }, 0.0);
  check("time path area is (t-s)^2/2", [&] {
    const RoughPath rp = canonical_lift([](double t) { return Vec::Constant(1, t); }, g, 4);
    double e = 0.0;
    for (std::size_t s = 0; s < g.size(); s += 7)
      for (std::size_t t = s + 1; t < g.size(); t += 5)
        e = std::max(e, std::abs(rp.area(s, t)(0, 0) - 0.5 * (g[t] - g[s]) * (g[t] - g[s])));
    return e;
  }, 1e-14);
  check("scalar Brownian area is half the squared increment", [&] {
    const RoughPath rp = brownian_stratonovich_lift(5, 1, g, 8);
    double e = 0.0;
    for (std::size_t k = 0; k < rp.steps(); ++k) {
      const double dx = rp.step_increment(k)(0);
      e = std::max(e, std::abs(rp.step_area(k)(0, 0) - 0.5 * dx * dx));
    }
    return e;
  }, 1e-15);
  check("same seed gives the same lift", [&] {
    return brownian_stratonovich_lift(9, 2, g, 8) == brownian_stratonovich_lift(9, 2, g, 8) ? 0.0 : 1.0;
  }, 0.0);
  check("Chen residual of a Brownian lift", [&] {
    const RoughPath rp = brownian_stratonovich_lift(2, 3, g, 8);
    return chen_residual_bound(rp) / chen_scale(rp);
  }, 1e-12);
  check("rough metric of a shifted path is the shift", [&] {
    const RoughPath a = brownian_stratonovich_lift(4, 2, g, 8);
    Vec c(2);
    c << 0.3, -0.4;
    return std::abs(rough_metric(a, a.shifted(c)) - 0.5) + rough_metric(a, a);
  }, 1e-12);
  check("integral of a constant integrand", [&] {
    const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(6, 1, g, 8));
    const Mat c = Mat::Constant(1, 1, 2.5);
    return std::abs(rough_integral(ControlledPath::constant(rp, c), 0, g.size() - 1)(0, 0) -
                    2.5 * rp->increment(0, g.size() - 1)(0));
  }, 1e-13);
  check("geometric identity int eta d eta", [&] {
    const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(7, 1, g, 8));
    const double xT = rp->value(g.size() - 1)(0), x0 = rp->value(0)(0);
    return std::abs(rough_integral(ControlledPath::identity_path(rp), 0, g.size() - 1)(0, 0) - 0.5 * (xT * xT - x0 * x0));
  }, 1e-12);
  check("zero coefficients give the identity flow", [&] {
    const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(8, 1, g, 8));
    const FlowKernel K = solve_forward_flow(RoughCoefficient::zero(rp, 2));
    double e = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) e = std::max(e, (K.forward[k] - Mat::Identity(2, 2)).cwiseAbs().maxCoeff());
    return e;
  }, 0.0);
  check("zero drift and rough part give e = Id", [&] {
    const auto rp = std::make_shared<const RoughPath>(zero_rough_path(g, 1));
    const EResult e = solve_e_equation(StepSeries::left_constant(std::vector<Mat>(g.size(), Mat::Zero(2, 2))),
                                       RoughCoefficient::zero(rp, 2));
    double err = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) err = std::max(err, std::abs(e.lambda[k] - 1.0) + (e.e[k] - Mat::Identity(2, 2)).norm());
    return err;
  }, 0.0);
  check("no dynamics and no cost keep the mean", [&] {
    ProblemSpec s = zero_problem(64, 2);
    const Equilibrium eq = solve_fbrde(s);
    double e = 0.0;
    for (std::size_t k = 0; k < s.grid.size(); ++k) e = std::max(e, (eq.m[k] - s.mean0).norm() + eq.ybar[k].norm());
    return e;
  }, 1e-14);
  check("zero instance has zero residuals and drift", [&] {
    ProblemSpec s = zero_problem(64, 1);
    const Equilibrium eq = solve_fbrde(s);
    const FbrdeResidual r = fbrde_residual(eq, s);
    return r.forward + r.backward + fixed_point_verify(s, eq, 2);
  }, 1e-14);
  check("zero cost gives zero cost estimate", [&] {
    ProblemSpec s = zero_problem(32, 1);
    s.drift.Sigma.assign(s.grid.size(), Mat::Identity(1, 1));
    const Equilibrium eq = solve_fbrde(s);
    SimConfig cfg;
    cfg.n_paths = 64;
    cfg.threads = 1;
    return std::abs(simulate(s, eq, cfg).J);
  }, 0.0);
  check("noiseless paths follow the mean flow", [&] {
    const TimeGrid fine = TimeGrid::uniform(1.0, 1024);
    const auto rp = std::make_shared<const RoughPath>(canonical_lift([](double t) { return Vec::Constant(1, std::sin(t)); }, fine, 8));
    ProblemSpec s = zero_problem(1024, 1, rp);
    s.drift.B.assign(s.grid.size(), Mat::Identity(1, 1));
    s.cost.Q.assign(s.grid.size(), Mat::Identity(1, 1));
    s.A1 = RoughCoefficient::constant(rp, {Mat::Constant(1, 1, 0.3)});
    s.validate();
    const Equilibrium eq = solve_fbrde(s);
    SimConfig cfg;
    cfg.n_paths = 8;
    cfg.threads = 1;
    const SimResult r = simulate(s, eq, cfg);
    double e = 0.0;
    for (std::size_t k = 0; k < s.grid.size(); ++k) e = std::max(e, (r.mean[k] - eq.m[k]).norm());
    return e;
  }, 1e-6);
  check("zero perturbation has zero gap", [&] {
    ProblemSpec s = zero_problem(32, 1);
    s.cost.Q.assign(s.grid.size(), Mat::Identity(1, 1));
    s.drift.B.assign(s.grid.size(), Mat::Identity(1, 1));
    s.drift.Sigma.assign(s.grid.size(), Mat::Constant(1, 1, 0.2));
    const Equilibrium eq = solve_fbrde(s);
    SimConfig cfg;
    cfg.n_paths = 64;
    cfg.threads = 1;
    const GapResult gr = optimality_gap(s, eq, std::vector<Vec>(s.grid.size(), Vec::Zero(1)), cfg);
    return std::abs(gr.gap) + gr.bound;
  }, 0.0);
  check("identical pair has zero numerators", [&] {
    const auto rp = std::make_shared<const RoughPath>(brownian_stratonovich_lift(3, 1, TimeGrid::uniform(1.0, 32), 4));
    ProblemSpec s = zero_problem(32, 1, rp);
    s.drift.B.assign(s.grid.size(), Mat::Identity(1, 1));
    s.cost.Q.assign(s.grid.size(), Mat::Identity(1, 1));
    s.A1 = RoughCoefficient::constant(rp, {Mat::Constant(1, 1, 0.3)});
    SimConfig cfg;
    cfg.n_paths = 4;
    cfg.threads = 1;
    const PairReport r = compare_pair({s, s}, cfg);
    return r.max_numerator() + r.den;
  }, 0.0);
  check("mean shift moves the trivial mean flow by the shift", [&] {
    ProblemSpec a = zero_problem(32, 1), b = a;
    b.mean0 = a.mean0 + Vec::Constant(1, 0.25);
    SimConfig cfg;
    cfg.n_paths = 4;
    cfg.threads = 1;
    const PairReport r = compare_pair({a, b}, cfg);
    return std::abs(r.num_mean - 0.25) + std::abs(r.ratio - 1.0);
  }, 1e-14);
  return out;
}

}  // namespace rmfg
