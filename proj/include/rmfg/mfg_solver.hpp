#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/LU>

#include "rmfg/problem.hpp"

namespace rmfg {

/// Coefficients of the transformed (classical) control problem together with
/// the Riccati solution P. Everything here is independent of the mean flow.
struct Decoupling {
  StepSeries hatA, hatB, hatR, frakB, hatQsum, P;
};

/// The mean-flow dependent part: the initial path M, the forcing terms and Pi.
struct AffinePart {
  std::vector<Vec> M;
  StepSeries Dhat, F, Pi;
};

/// alpha(t_k, x) = gain_k x + offset_k.
struct Feedback {
  std::vector<Mat> gain;
  std::vector<Vec> offset;
  Vec operator()(std::size_t k, const Vec& x) const { return gain[k] * x + offset[k]; }
};

struct Equilibrium {
  FlowKernel K;
  EResult e;
  StepSeries ptilde, pbar;
  std::vector<Vec> m, ybar;
  ControlledPath mpath;
  Decoupling dec;
  AffinePart aff;
  Feedback feedback;
  double J = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline std::vector<Mat> as_columns(const std::vector<Vec>& v) {
  std::vector<Mat> out;
  out.reserve(v.size());
  for (const auto& x : v) out.emplace_back(x);
  return out;
}

/// Per-step linear series whose left value uses K at t_k and whose right limit
/// uses K at t_{k+1}, both with the step's left-constant data.
template <class Fn>
StepSeries hat_series(std::size_t n, Fn&& value) {
  std::vector<Mat> left(n), right(n - 1);
  for (std::size_t k = 0; k < n; ++k) left[k] = value(k, k);
  for (std::size_t k = 0; k + 1 < n; ++k) right[k] = value(k, k + 1);
  return StepSeries::linear(std::move(left), std::move(right));
}

}  // namespace detail

/// Mean path as a controlled path with derivative (A1 + C1) m.
inline ControlledPath mean_path(const ProblemSpec& s, const std::vector<Vec>& m) {
  const std::size_t n = m.size();
  std::vector<Mat> z(n), dz(n * s.p);
  for (std::size_t k = 0; k < n; ++k) {
    z[k] = m[k];
    for (std::size_t i = 0; i < s.p; ++i) dz[k * s.p + i] = (s.A1.value(k, i) + s.C1.value(k, i)) * m[k];
  }
  return ControlledPath(s.eta, std::move(z), std::move(dz), s.beta, s.beta_prime);
}

/// hatA = K(0,t) A K(t,0), hatB = K(0,t) B, hatR = R, frakB = hatB R^{-1} hatB^T,
/// hatQsum = K(t,0)^T (Q + Qbar) K(t,0), and the Riccati solution P with
/// P_T = K(T,0)^T (Q_T + Qbar_T) K(T,0).
inline Decoupling transformed_riccati(const ProblemSpec& s, const FlowKernel& K) {
  const std::size_t n = s.grid.size();
  Decoupling dec;
  std::vector<Mat> Rinv(n);
  for (std::size_t k = 0; k < n; ++k) Rinv[k] = detail::spd_inverse(s.cost.R[k], "R");
  dec.hatA = detail::hat_series(n, [&](std::size_t k, std::size_t j) {
    return Mat(K.inverse[j] * s.drift.A[k] * K.forward[j]);
  });
  dec.hatB = detail::hat_series(n, [&](std::size_t k, std::size_t j) { return Mat(K.inverse[j] * s.drift.B[k]); });
  dec.hatR = StepSeries::left_constant(s.cost.R);
  dec.frakB = detail::hat_series(n, [&](std::size_t k, std::size_t j) {
    const Mat b = K.inverse[j] * s.drift.B[k];
    return Mat(b * Rinv[k] * b.transpose());
  });
  dec.hatQsum = detail::hat_series(n, [&](std::size_t k, std::size_t j) {
    return Mat(K.forward[j].transpose() * (s.cost.Q[k] + s.cost.Qbar[k]) * K.forward[j]);
  });
  const Mat PT = K.forward[n - 1].transpose() * (s.cost.Q_T + s.cost.Qbar_T) * K.forward[n - 1];
  dec.P = solve_classical_riccati(s.grid, dec.hatA, dec.hatB, dec.hatR, dec.hatQsum, PT);
  return dec;
}

/// M(m), Dhat = K(0,t)(A M + C m), F = K(t,0)^T ((Q + Qbar) M - Qbar S m) and Pi
/// with Pi_T = K(T,0)^T ((Q_T + Qbar_T) M_T - Qbar_T S_T m_T).
inline AffinePart affine_part(const ProblemSpec& s, const FlowKernel& K, const Decoupling& dec, const ControlledPath& m) {
  const std::size_t n = s.grid.size();
  AffinePart a;
  a.M = compute_M(K, s.A1, s.C1, m);
  const auto mv = [&](std::size_t j) -> Vec { return m.value(j).col(0); };
  a.Dhat = detail::hat_series(n, [&](std::size_t k, std::size_t j) {
    return Mat(K.inverse[j] * (s.drift.A[k] * a.M[j] + s.drift.C[k] * mv(j)));
  });
  a.F = detail::hat_series(n, [&](std::size_t k, std::size_t j) {
    return Mat(K.forward[j].transpose() *
               ((s.cost.Q[k] + s.cost.Qbar[k]) * a.M[j] - s.cost.Qbar[k] * s.cost.S[k] * mv(j)));
  });
  const Vec term = K.forward[n - 1].transpose() *
                   ((s.cost.Q_T + s.cost.Qbar_T) * a.M[n - 1] - s.cost.Qbar_T * s.cost.S_T * mv(n - 1));
  a.Pi = solve_Pi(s.grid, dec.P, dec.hatA, dec.frakB, a.Dhat, a.F, term);
  return a;
}

/// alpha(t,x) = -R^{-1} B^T [K(0,t)^T P K(0,t) (x - M_t) + K(0,t)^T Pi_t].
inline Feedback optimal_feedback(const ProblemSpec& s, const FlowKernel& K, const Decoupling& dec, const AffinePart& a) {
  const std::size_t n = s.grid.size();
  Feedback fb;
  fb.gain.resize(n);
  fb.offset.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Mat rb = -detail::spd_inverse(s.cost.R[k], "R") * s.drift.B[k].transpose();
    const Mat kpk = K.inverse[k].transpose() * dec.P.node(k) * K.inverse[k];
    fb.gain[k] = rb * kpk;
    fb.offset[k] = rb * (K.inverse[k].transpose() * a.Pi.node(k).col(0) - kpk * a.M[k]);
  }
  return fb;
}

/// Mean of the optimally controlled state against a frozen mean flow:
/// RK4 on d/dt E[hatX] = hatA E[hatX] - frakB (P E[hatX] + Pi) + Dhat, then
/// E[X_t] = K(t,0) E[hatX_t] + M_t.
inline std::vector<Vec> best_response_mean(const ProblemSpec& s, const FlowKernel& K, const Decoupling& dec,
                                           const AffinePart& a) {
  const std::size_t n = s.grid.size();
  const auto rhs = [&](std::size_t k, double th, const Vec& x) -> Vec {
    return dec.hatA.at(k, th) * x - dec.frakB.at(k, th) * (dec.P.at(k, th) * x + a.Pi.at(k, th).col(0)) +
           a.Dhat.at(k, th).col(0);
  };
  std::vector<Vec> out(n);
  Vec x = s.mean0;
  out[0] = K.forward[0] * x + a.M[0];
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double h = s.grid.dt(k);
    const Vec k1 = rhs(k, 0.0, x);
    const Vec k2 = rhs(k, 0.5, x + 0.5 * h * k1);
    const Vec k3 = rhs(k, 0.5, x + 0.5 * h * k2);
    const Vec k4 = rhs(k, 1.0, x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out[k + 1] = K.forward[k + 1] * x + a.M[k + 1];
  }
  return out;
}

/// The e-path and the (S4-R) decision for a problem.
inline EResult e_path(const ProblemSpec& s) {
  validate_tilde(s.cost, s.grid);
  EResult e = solve_e_equation(StepSeries::left_constant(s.drift.C), s.C1);
  if (!e.s4r && !s.allow_s4r_violation) {
    std::ostringstream os;
    os << "e_t is not a positive multiple of the identity (relative deviation " << e.violation << " at t="
       << s.grid[e.worst_node] << ")";
    throw AssumptionError("S4-R", os.str());
  }
  for (double l : e.lambda)
    if (!(l > 0.0)) throw AssumptionError("S4-R", "lambda_t = trace(e_t)/d is not positive");
  return e;
}

/// Equilibrium through the decoupled FBRDE: e-path, symmetric rough Riccati,
/// pbar = e ptilde, the forward mean equation, then the Volterra decoupling
/// data for the agent's feedback.
inline Equilibrium solve_fbrde(ProblemSpec s) {
  s.validate();
  const std::size_t n = s.grid.size();
  Equilibrium eq;
  eq.e = e_path(s);
  const RoughCoefficient G = s.G();
  eq.ptilde = solve_symmetric_rough_riccati(s.grid, s.drift, s.cost, G, ScalarSeries(eq.e.lambda));
  eq.pbar = assemble_pbar(eq.e, eq.ptilde);
  std::vector<Mat> dn(n), dm(n - 1);
  std::vector<Mat> bq(n);
  for (std::size_t k = 0; k < n; ++k)
    bq[k] = s.drift.B[k] * detail::spd_inverse(s.cost.R[k], "R") * s.drift.B[k].transpose();
  for (std::size_t k = 0; k < n; ++k) dn[k] = s.drift.A[k] + s.drift.C[k] - bq[k] * eq.pbar.node(k);
  for (std::size_t k = 0; k + 1 < n; ++k) dm[k] = s.drift.A[k] + s.drift.C[k] - bq[k] * eq.pbar.mid(k);
  const StepSeries D = StepSeries::quadratic(std::move(dn), std::move(dm));
  eq.m = solve_affine_rde(s.mean0, &D, nullptr, G);
  eq.mpath = mean_path(s, eq.m);
  eq.ybar.resize(n);
  for (std::size_t k = 0; k < n; ++k) eq.ybar[k] = eq.pbar.node(k) * eq.m[k];
  eq.K = solve_forward_flow(s.A1);
  eq.dec = transformed_riccati(s, eq.K);
  eq.aff = affine_part(s, eq.K, eq.dec, eq.mpath);
  eq.feedback = optimal_feedback(s, eq.K, eq.dec, eq.aff);
  return eq;
}

struct FbrdeResidual {
  double forward = 0.0;
  double backward = 0.0;
};

/// Re-integrates both lines of the FBRDE with the computed (xbar, ybar):
/// drift by the trapezoid rule, rough integrals by trapezoid-compensated sums
/// with xbar' = (A1+C1) xbar and ybar' = -(A1)^T ybar.
inline FbrdeResidual fbrde_residual(const Equilibrium& eq, const ProblemSpec& s) {
  const std::size_t n = s.grid.size(), p = s.p;
  const auto d = static_cast<Eigen::Index>(s.d);
  FbrdeResidual r;
  const RoughCoefficient G = s.G();
  std::vector<Mat> x(n), dx(n * p), y(n), dy(n * p);
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = eq.m[k];
    y[k] = eq.ybar[k];
    for (std::size_t i = 0; i < p; ++i) {
      dx[k * p + i] = G.value(k, i) * eq.m[k];
      dy[k * p + i] = -s.A1.value(k, i).transpose() * eq.ybar[k];
    }
  }
  const ControlledPath X(s.eta, x, dx, s.gamma, s.beta), Y(s.eta, y, dy, s.gamma, s.beta);
  Integrand zx, zy;
  for (std::size_t j = 0; j < p; ++j) {
    zx.push_back(product(G.component(j, s.beta, s.beta_prime), X));
    zy.push_back(product(s.A1.component(j, s.beta, s.beta_prime).transposed(), Y));
  }
  std::vector<Mat> Rinv(n);
  for (std::size_t k = 0; k < n; ++k) Rinv[k] = detail::spd_inverse(s.cost.R[k], "R");
  const auto fwd_drift = [&](std::size_t k, std::size_t j) -> Vec {
    return (s.drift.A[k] + s.drift.C[k]) * eq.m[j] - s.drift.B[k] * Rinv[k] * s.drift.B[k].transpose() * eq.ybar[j];
  };
  const auto bwd_drift = [&](std::size_t k, std::size_t j) -> Vec {
    return s.cost.tilde(k) * eq.m[j] + s.drift.A[k].transpose() * eq.ybar[j];
  };
  Vec acc = eq.m[0];
  for (std::size_t k = 0; k + 1 < n; ++k) {
    acc += 0.5 * s.grid.dt(k) * (fwd_drift(k, k) + fwd_drift(k, k + 1)) + detail::trapezoid_step(zx, k).col(0);
    r.forward = std::max(r.forward, (acc - eq.m[k + 1]).cwiseAbs().maxCoeff());
  }
  Vec bacc = s.cost.tilde_T() * eq.m[n - 1];
  r.backward = (bacc - eq.ybar[n - 1]).cwiseAbs().maxCoeff();
  for (std::size_t k = n - 1; k-- > 0;) {
    bacc += 0.5 * s.grid.dt(k) * (bwd_drift(k, k) + bwd_drift(k, k + 1)) + detail::trapezoid_step(zy, k).col(0);
    r.backward = std::max(r.backward, (bacc - eq.ybar[k]).cwiseAbs().maxCoeff());
  }
  (void)d;
  return r;
}

/// The best-response map F~((m, m')) = (E[X], A1 E[X] + C1 m) through the
/// Volterra decoupling.
inline ControlledPath best_response(const ProblemSpec& s, const FlowKernel& K, const Decoupling& dec,
                                    const ControlledPath& m) {
  const AffinePart a = affine_part(s, K, dec, m);
  const std::vector<Vec> x = best_response_mean(s, K, dec, a);
  const std::size_t n = x.size();
  std::vector<Mat> z(n), dz(n * s.p);
  for (std::size_t k = 0; k < n; ++k) {
    z[k] = x[k];
    for (std::size_t i = 0; i < s.p; ++i)
      dz[k * s.p + i] = s.A1.value(k, i) * x[k] + s.C1.value(k, i) * m.value(k);
  }
  return ControlledPath(s.eta, std::move(z), std::move(dz), s.beta, s.beta_prime);
}

/// Mean flow of the Volterra FBODE route: the consistency condition
/// m = E[X^{(m, (A1+C1) m)}] is affine in m, so it is assembled column by
/// column and solved as one dense linear system.
inline std::vector<Vec> solve_volterra_fbode(ProblemSpec s) {
  s.validate();
  const std::size_t n = s.grid.size(), d = s.d;
  const FlowKernel K = solve_forward_flow(s.A1);
  const Decoupling dec = transformed_riccati(s, K);
  const std::size_t dim = n * d;
  const auto eval = [&](const Eigen::VectorXd& flat) {
    std::vector<Vec> m(n);
    for (std::size_t k = 0; k < n; ++k) m[k] = flat.segment(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(d));
    const AffinePart a = affine_part(s, K, dec, mean_path(s, m));
    const std::vector<Vec> x = best_response_mean(s, K, dec, a);
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < n; ++k) out.segment(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(d)) = x[k];
    return out;
  };
  const Eigen::VectorXd b = eval(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)));
  Mat sys = Mat::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < dim; ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    e(static_cast<Eigen::Index>(c)) = 1.0;
    sys.col(static_cast<Eigen::Index>(c)) -= eval(e) - b;
  }
  Eigen::PartialPivLU<Mat> lu(sys);
  const Eigen::VectorXd flat = lu.solve(b);
  if (!flat.allFinite()) throw NumericalError("Volterra FBODE system is singular");
  std::vector<Vec> m(n);
  for (std::size_t k = 0; k < n; ++k) m[k] = flat.segment(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(d));
  return m;
}

inline double sup_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  double out = 0.0;
  for (std::size_t k = 0; k < a.size() && k < b.size(); ++k) out = std::max(out, (a[k] - b[k]).cwiseAbs().maxCoeff());
  return out;
}

/// Distance between a fine-grid path and a coarse-grid path on the common nodes.
inline double coarse_fine_gap(const std::vector<Vec>& fine, const std::vector<Vec>& coarse) {
  const std::size_t f = (fine.size() - 1) / (coarse.size() - 1);
  double out = 0.0;
  for (std::size_t k = 0; k < coarse.size(); ++k) out = std::max(out, (fine[k * f] - coarse[k]).cwiseAbs().maxCoeff());
  return out;
}

/// Picard iterates of F~ from a given starting flow; entry i is the sup
/// distance of iterate i+1 from the reference mean flow.
inline std::vector<double> picard_trace(const ProblemSpec& s, const Equilibrium& eq, const ControlledPath& start,
                                        int n_picard) {
  std::vector<double> out;
  ControlledPath cur = start;
  for (int it = 0; it < n_picard; ++it) {
    cur = best_response(s, eq.K, eq.dec, cur);
    std::vector<Vec> v(cur.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = cur.value(k).col(0);
    const double dist = sup_distance(v, eq.m);
    if (!std::isfinite(dist)) throw NumericalError("Picard iteration diverged");
    out.push_back(dist);
  }
  return out;
}

/// Largest drift of the Picard iterates started at the computed equilibrium.
inline double fixed_point_verify(const ProblemSpec& s, const Equilibrium& eq, int n_picard) {
  double worst = 0.0;
  for (double v : picard_trace(s, eq, eq.mpath, n_picard)) worst = std::max(worst, v);
  return worst;
}

/// Scheme error estimate of the mean flow: distance between the solutions on
/// the grid and on the grid with every other node dropped.
inline double mean_scheme_error(const ProblemSpec& s, const Equilibrium& eq) {
  const Equilibrium coarse = solve_fbrde(s.coarsened(2));
  return coarse_fine_gap(eq.m, coarse.m);
}

}  // namespace rmfg
