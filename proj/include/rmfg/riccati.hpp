#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rmfg/linear_rde.hpp"

namespace rmfg {

/// Quadratic cost data. Flow matrices are given per node and read
/// left-constant inside each step; terminal matrices are single values.
struct CostSpec {
  std::vector<Mat> Q, Qbar, R, S;
  Mat Q_T, Qbar_T, S_T;
  double lambda = 1.0;

  /// Q + Qbar - Qbar S at node k.
  Mat tilde(std::size_t k) const { return Q[k] + Qbar[k] - Qbar[k] * S[k]; }
  Mat tilde_T() const { return Q_T + Qbar_T - Qbar_T * S_T; }

  CostSpec coarsened(std::size_t f) const {
    CostSpec c = *this;
    const auto pick = [f](const std::vector<Mat>& v) {
      std::vector<Mat> out;
      for (std::size_t k = 0; k < v.size(); k += f) out.push_back(v[k]);
      return out;
    };
    c.Q = pick(Q);
    c.Qbar = pick(Qbar);
    c.R = pick(R);
    c.S = pick(S);
    return c;
  }
};

/// Linear drift data (A, B, C) and diffusion Sigma per node.
struct DriftSpec {
  std::vector<Mat> A, B, C, Sigma;

  DriftSpec coarsened(std::size_t f) const {
    DriftSpec d;
    for (std::size_t k = 0; k < A.size(); k += f) {
      d.A.push_back(A[k]);
      d.B.push_back(B[k]);
      d.C.push_back(C[k]);
      d.Sigma.push_back(Sigma[k]);
    }
    return d;
  }
};

namespace detail {

inline std::string time_label(const TimeGrid& g, std::size_t k) {
  std::ostringstream os;
  os << "t=" << g[k];
  return os.str();
}

inline double min_sym_eigen(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline void require_psd(const Mat& m, const char* tag, const std::string& what) {
  if (min_sym_eigen(m) < -1e-12) throw AssumptionError(tag, what + " is not positive semidefinite");
}

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// R^{-1} via Cholesky; a failed factorisation is a numerical error.
inline Mat spd_inverse(const Mat& r, const char* what) {
  Eigen::LLT<Mat> llt(r);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix is not positive definite");
  return llt.solve(Mat::Identity(r.rows(), r.cols()));
}

}  // namespace detail

/// Checks of the cost data: symmetric PSD state weights, R_t >= lambda,
/// lambda > 0. Inputs are symmetrised in place.
inline void validate_cost(CostSpec& c, const TimeGrid& g, std::size_t d, std::size_t kappa) {
  const auto n = g.size();
  const auto D = static_cast<Eigen::Index>(d), K = static_cast<Eigen::Index>(kappa);
  if (c.Q.size() != n || c.Qbar.size() != n || c.R.size() != n || c.S.size() != n)
    throw ConfigError("cost: flow matrices need one value per grid node");
  if (!(c.lambda > 0.0)) throw AssumptionError("S3", "lambda must be positive");
  const auto shape = [](const Mat& m, Eigen::Index r, Eigen::Index cc, const char* name) {
    if (m.rows() != r || m.cols() != cc) throw ConfigError(std::string("cost: ") + name + " has the wrong shape");
    if (!m.allFinite()) throw InputError(std::string("cost: ") + name + " has non-finite entries");
  };
  shape(c.Q_T, D, D, "Q_T");
  shape(c.Qbar_T, D, D, "Qbar_T");
  shape(c.S_T, D, D, "S_T");
  c.Q_T = detail::symmetrized(c.Q_T);
  c.Qbar_T = detail::symmetrized(c.Qbar_T);
  detail::require_psd(c.Q_T, "S3", "terminal Q");
  detail::require_psd(c.Qbar_T, "S3", "terminal Qbar");
  for (std::size_t k = 0; k < n; ++k) {
    shape(c.Q[k], D, D, "Q");
    shape(c.Qbar[k], D, D, "Qbar");
    shape(c.R[k], K, K, "R");
    shape(c.S[k], D, D, "S");
    c.Q[k] = detail::symmetrized(c.Q[k]);
    c.Qbar[k] = detail::symmetrized(c.Qbar[k]);
    c.R[k] = detail::symmetrized(c.R[k]);
    detail::require_psd(c.Q[k], "S3", "Q_t at " + detail::time_label(g, k));
    detail::require_psd(c.Qbar[k], "S3", "Qbar_t at " + detail::time_label(g, k));
    if (detail::min_sym_eigen(c.R[k]) < c.lambda - 1e-12)
      throw AssumptionError("S3", "R_t not positive definite above lambda at " + detail::time_label(g, k));
  }
}

/// The effective weights Q + Qbar - Qbar S must be symmetric and PSD for the
/// symmetric rough Riccati route.
inline void validate_tilde(const CostSpec& c, const TimeGrid& g) {
  const auto check = [](const Mat& m, const std::string& where) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.norm()))
      throw AssumptionError("S4-R", "Q + Qbar - Qbar S is not symmetric " + where);
    if (detail::min_sym_eigen(m) < -1e-12) throw AssumptionError("S4-R", "Q + Qbar - Qbar S is not PSD " + where);
  };
  for (std::size_t k = 0; k < c.Q.size(); ++k) check(c.tilde(k), "at " + detail::time_label(g, k));
  check(c.tilde_T(), "at the terminal time");
}

/// Right-hand side pieces of a matrix Riccati equation
///   p_t = p_T + int_t^T (p lin + lin^T p - p quad p + src) ds   (symmetric form)
/// evaluated at t_k + theta dt_k.
struct RiccatiTerms {
  std::function<Mat(std::size_t, double)> lin;
  std::function<Mat(std::size_t, double)> lin_left;  // optional; lin^T when empty
  std::function<Mat(std::size_t, double)> quad;
  std::function<Mat(std::size_t, double)> src;
};

/// Rough part L_j(p) = p right_j + left_j p of a backward matrix equation.
struct BackwardRough {
  RoughCoefficient right;
  RoughCoefficient left;
};

namespace detail {

inline Mat riccati_rhs(const RiccatiTerms& t, std::size_t k, double th, const Mat& P) {
  const Mat a = t.lin(k, th);
  const Mat al = t.lin_left ? t.lin_left(k, th) : Mat(a.transpose());
  Mat out = P * a + al * P + t.src(k, th);
  if (t.quad) out -= P * t.quad(k, th) * P;
  return out;
}

/// Backward RK4 from theta = a down to theta = b of step k.
inline Mat riccati_half(const RiccatiTerms& t, std::size_t k, double dt, double a, double b, const Mat& P) {
  const double h = (a - b) * dt, m = 0.5 * (a + b);
  const Mat k1 = riccati_rhs(t, k, a, P);
  const Mat k2 = riccati_rhs(t, k, m, P + 0.5 * h * k1);
  const Mat k3 = riccati_rhs(t, k, m, P + 0.5 * h * k2);
  const Mat k4 = riccati_rhs(t, k, b, P + h * k3);
  return P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Rough step backward over [t_k, t_{k+1}] with coefficients frozen at t_{k+1}:
/// p + L_j(p) d eta^j + (L_j L_i - L'_{j,i})(p) (d eta^i d eta^j - eta2^{ij}).
inline Mat backward_rough_step(const BackwardRough& r, std::size_t k, const Mat& P) {
  const RoughPath& rp = r.right.rough();
  const std::size_t p = rp.dim(), n1 = k + 1;
  const Vec de = rp.step_increment(k);
  const Mat& a = rp.step_area(k);
  const auto L = [&](std::size_t j, const Mat& X) -> Mat { return X * r.right.value(n1, j) + r.left.value(n1, j) * X; };
  const auto dL = [&](std::size_t j, std::size_t i, const Mat& X) -> Mat {
    return X * r.right.deriv(n1, j, i) + r.left.deriv(n1, j, i) * X;
  };
  Mat out = P;
  std::vector<Mat> Li(p);
  for (std::size_t i = 0; i < p; ++i) Li[i] = L(i, P);
  for (std::size_t j = 0; j < p; ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    out += Li[j] * de(J);
    for (std::size_t i = 0; i < p; ++i) {
      const auto I = static_cast<Eigen::Index>(i);
      const double w = de(I) * de(J) - a(I, J);
      if (w == 0.0) continue;
      out += (L(j, Li[i]) - dL(j, i, P)) * w;
    }
  }
  return out;
}

}  // namespace detail

struct BackwardOptions {
  bool symmetric = true;
  double blowup = 1e8;
  double symmetry_tol = 1e-6;
  const char* label = "Riccati";
};

/// Backward solver shared by the classical and rough Riccati equations: per
/// step an RK4 half step for the drift, the rough step, another RK4 half step.
/// Without a rough part the two halves are plain RK4 steps of half length.
/// Returns node values with midpoint values for quadratic interpolation.
inline StepSeries solve_backward_riccati(const TimeGrid& g, const Mat& terminal, const RiccatiTerms& terms,
                                         const BackwardRough* rough = nullptr, BackwardOptions opt = {}) {
  const std::size_t n = g.size();
  std::vector<Mat> nodes(n), mids(n - 1);
  nodes[n - 1] = opt.symmetric ? detail::symmetrized(terminal) : terminal;
  for (std::size_t kk = n - 1; kk-- > 0;) {
    const double dt = g.dt(kk);
    Mat P = detail::riccati_half(terms, kk, dt, 1.0, 0.5, nodes[kk + 1]);
    if (rough) {
      const Mat before = P;
      P = detail::backward_rough_step(*rough, kk, P);
      mids[kk] = 0.5 * (before + P);
    } else {
      mids[kk] = P;
    }
    P = detail::riccati_half(terms, kk, dt, 0.5, 0.0, P);
    if (!P.allFinite() || P.norm() > opt.blowup)
      throw NumericalError(std::string(opt.label) + " solution blew up at " + detail::time_label(g, kk) +
                           "; the data likely violate (S3)/(S4-R)");
    if (opt.symmetric) {
      if ((P - P.transpose()).norm() > opt.symmetry_tol * std::max(1.0, P.norm()))
        throw NumericalError(std::string(opt.label) + " lost symmetry at " + detail::time_label(g, kk) +
                             " (scheme failure)");
      P = detail::symmetrized(P);
      mids[kk] = detail::symmetrized(mids[kk]);
    }
    nodes[kk] = std::move(P);
  }
  return StepSeries::quadratic(std::move(nodes), std::move(mids));
}

/// Pdot + P hatA + hatA^T P - P hatB hatR^{-1} hatB^T P + hatQsum = 0, P_T = G.
inline StepSeries solve_classical_riccati(const TimeGrid& g, const StepSeries& hatA, const StepSeries& hatB,
                                          const StepSeries& hatR, const StepSeries& hatQsum, const Mat& G) {
  RiccatiTerms t;
  t.lin = [&](std::size_t k, double th) { return hatA.at(k, th); };
  t.quad = [&](std::size_t k, double th) {
    const Mat b = hatB.at(k, th);
    return Mat(b * detail::spd_inverse(hatR.at(k, th), "hat R") * b.transpose());
  };
  t.src = [&](std::size_t k, double th) { return hatQsum.at(k, th); };
  BackwardOptions opt;
  opt.label = "classical Riccati";
  return solve_backward_riccati(g, G, t, nullptr, opt);
}

/// Pi for the affine part of the decoupling field:
///   Pidot + (hatA^T - P frakB) Pi + P Dhat + F = 0,  Pi_T = terminal,
/// with frakB = hatB hatR^{-1} hatB^T. Backward RK4 in two half steps per
/// interval so that midpoint values come out exactly; P is read through its
/// quadratic interpolation, (Dhat, F) as given.
inline StepSeries solve_Pi(const TimeGrid& g, const StepSeries& P, const StepSeries& hatA, const StepSeries& frakB,
                           const StepSeries& Dhat, const StepSeries& F, const Vec& terminal) {
  const std::size_t n = g.size();
  std::vector<Mat> nodes(n), mids(n - 1);
  nodes[n - 1] = terminal;
  const auto rhs = [&](std::size_t k, double th, const Mat& x) -> Mat {
    const Mat Pk = P.at(k, th);
    return (hatA.at(k, th).transpose() - Pk * frakB.at(k, th)) * x + Pk * Dhat.at(k, th) + F.at(k, th);
  };
  const auto half = [&](std::size_t k, double a, double b, const Mat& x) -> Mat {
    const double h = (a - b) * g.dt(k), m = 0.5 * (a + b);
    const Mat k1 = rhs(k, a, x);
    const Mat k2 = rhs(k, m, x + 0.5 * h * k1);
    const Mat k3 = rhs(k, m, x + 0.5 * h * k2);
    const Mat k4 = rhs(k, b, x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  };
  for (std::size_t k = n - 1; k-- > 0;) {
    mids[k] = half(k, 1.0, 0.5, nodes[k + 1]);
    nodes[k] = half(k, 0.5, 0.0, mids[k]);
    if (!nodes[k].allFinite()) throw NumericalError("Pi equation produced non-finite values");
  }
  return StepSeries::quadratic(std::move(nodes), std::move(mids));
}

/// Symmetric rough Riccati for ptilde with rough part G = A1 + C1 and the
/// scalar e_t = lambda_t Id entering the quadratic term and the source:
///   ptilde_t = Qtilde_T / lambda_T + int_t^T (p G + G^T p) d eta
///            + int_t^T (p (A+C) + (A+C)^T p - lambda p B R^{-1} B^T p + Qtilde / lambda) ds.
inline StepSeries solve_symmetric_rough_riccati(const TimeGrid& g, const DriftSpec& drift, const CostSpec& cost,
                                                const RoughCoefficient& G, const ScalarSeries& lambda) {
  const std::size_t n = g.size();
  if (drift.A.size() != n || lambda.size() != n || G.size() != n)
    throw ConfigError("symmetric rough Riccati: inputs live on different grids");
  std::vector<Mat> lin(n), bq(n);
  for (std::size_t k = 0; k < n; ++k) {
    lin[k] = drift.A[k] + drift.C[k];
    bq[k] = drift.B[k] * detail::spd_inverse(cost.R[k], "R") * drift.B[k].transpose();
  }
  RiccatiTerms t;
  t.lin = [&](std::size_t k, double) { return lin[k]; };
  t.quad = [&](std::size_t k, double th) { return Mat(lambda.at(k, th) * bq[k]); };
  t.src = [&](std::size_t k, double th) { return Mat(cost.tilde(k) / lambda.at(k, th)); };
  BackwardOptions opt;
  opt.label = "symmetric rough Riccati";
  const Mat terminal = cost.tilde_T() / lambda.node(n - 1);
  if (G.is_zero()) return solve_backward_riccati(g, terminal, t, nullptr, opt);
  const BackwardRough r{G, G.transposed()};
  return solve_backward_riccati(g, terminal, t, &r, opt);
}

/// pbar = e ptilde node by node; midpoints use the scalar lambda when the
/// e-path is a multiple of the identity.
inline StepSeries assemble_pbar(const EResult& e, const StepSeries& ptilde) {
  const std::size_t n = ptilde.size();
  if (e.e.size() != n) throw ConfigError("assemble_pbar: e and ptilde live on different grids");
  std::vector<Mat> nodes(n), mids(n - 1);
  const ScalarSeries lam(e.lambda);
  for (std::size_t k = 0; k < n; ++k) nodes[k] = e.e[k] * ptilde.node(k);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const Mat emid = e.s4r ? Mat(lam.at(k, 0.5) * Mat::Identity(e.e[k].rows(), e.e[k].cols()))
                           : Mat(0.5 * (e.e[k] + e.e[k + 1]));
    mids[k] = emid * ptilde.mid(k);
  }
  return StepSeries::quadratic(std::move(nodes), std::move(mids));
}

/// Controlled path of pbar with derivative -(pbar G_i + (A1_i)^T pbar).
inline ControlledPath pbar_controlled(const StepSeries& pbar, const RoughCoefficient& A1, const RoughCoefficient& C1) {
  const std::size_t n = pbar.size(), p = A1.noise_dim();
  std::vector<Mat> z(pbar.nodes()), dz(n * p);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < p; ++i)
      dz[k * p + i] = -(z[k] * (A1.value(k, i) + C1.value(k, i)) + A1.value(k, i).transpose() * z[k]);
  return ControlledPath(A1.reference(), std::move(z), std::move(dz), 0.4, 0.4);
}

struct RRiccatiResidual {
  double terminal = 0.0;    // |pbar_T - Qtilde_T|
  double integrated = 0.0;  // max over nodes of the integrated-form defect
};

/// Re-integrates the non-symmetric rough Riccati equation for pbar:
/// pbar_t = Qtilde_T + int_t^T (pbar (A1+C1) + (A1)^T pbar) d eta
///        + int_t^T (pbar (A+C) + A^T pbar - pbar B R^{-1} B^T pbar + Qtilde) ds,
/// rough part by trapezoid-compensated sums of the controlled integrand, drift by
/// Simpson's rule on node and midpoint values.
inline RRiccatiResidual rriccati_residual(const StepSeries& pbar, const DriftSpec& drift, const CostSpec& cost,
                                          const RoughCoefficient& A1, const RoughCoefficient& C1) {
  const TimeGrid& g = A1.rough().grid();
  const std::size_t n = g.size(), p = A1.noise_dim();
  RRiccatiResidual out;
  out.terminal = (pbar.node(n - 1) - cost.tilde_T()).cwiseAbs().maxCoeff();
  const ControlledPath P = pbar_controlled(pbar, A1, C1);
  Integrand z;
  for (std::size_t j = 0; j < p; ++j)
    z.push_back(product(P, A1.component(j) + C1.component(j)) + product(A1.component(j).transposed(), P));
  const auto f = [&](std::size_t k, const Mat& X) -> Mat {
    const Mat bq = drift.B[k] * detail::spd_inverse(cost.R[k], "R") * drift.B[k].transpose();
    return X * (drift.A[k] + drift.C[k]) + drift.A[k].transpose() * X - X * bq * X + cost.tilde(k);
  };
  Mat acc = pbar.node(n - 1);
  for (std::size_t k = n - 1; k-- > 0;) {
    const double h = g.dt(k);
    acc += (h / 6.0) * (f(k, pbar.node(k)) + 4.0 * f(k, pbar.mid(k)) + f(k, pbar.node(k + 1)));
    acc += detail::trapezoid_step(z, k);
    out.integrated = std::max(out.integrated, (acc - pbar.node(k)).cwiseAbs().maxCoeff());
  }
  return out;
}

}  // namespace rmfg
