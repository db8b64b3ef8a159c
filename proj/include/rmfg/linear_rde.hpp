#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/LU>

#include "rmfg/controlled_path.hpp"
#include "rmfg/series.hpp"

namespace rmfg {

/// Controlled linear vector field x -> sum_j G_j x d eta^j, one d x d matrix per
/// noise direction and node, with Gubinelli derivatives G'_{j,i} (response of
/// G_j to eta^i).
class RoughCoefficient {
 public:
  RoughCoefficient() = default;

  RoughCoefficient(RoughPathPtr ref, std::size_t d, std::vector<Mat> g, std::vector<Mat> gp)
      : ref_(std::move(ref)), d_(d), g_(std::move(g)), gp_(std::move(gp)) {
    if (!ref_) throw ConfigError("rough coefficient needs a reference rough path");
    const std::size_t n = ref_->grid().size(), p = ref_->dim();
    if (g_.size() != n * p) throw ConfigError("rough coefficient: need p matrices per node");
    if (gp_.size() != n * p * p) throw ConfigError("rough coefficient: need p*p derivative matrices per node");
    const auto sq = static_cast<Eigen::Index>(d_);
    for (const auto& m : g_)
      if (m.rows() != sq || m.cols() != sq) throw ConfigError("rough coefficient: values must be d x d");
    for (const auto& m : gp_)
      if (m.rows() != sq || m.cols() != sq) throw ConfigError("rough coefficient: derivatives must be d x d");
    for (const auto& m : g_)
      if (!m.allFinite()) throw InputError("rough coefficient: non-finite value");
    for (const auto& m : gp_)
      if (!m.allFinite()) throw InputError("rough coefficient: non-finite derivative");
  }

  /// Time-constant coefficient. gp, if given, holds p*p blocks indexed j*p + i.
  static RoughCoefficient constant(RoughPathPtr ref, const std::vector<Mat>& gj, const std::vector<Mat>& gp = {}) {
    const std::size_t n = ref->grid().size(), p = ref->dim();
    if (gj.size() != p) throw ConfigError("rough coefficient: need one matrix per noise direction");
    const std::size_t d = static_cast<std::size_t>(gj[0].rows());
    if (!gp.empty() && gp.size() != p * p) throw ConfigError("rough coefficient: need p*p derivative matrices");
    std::vector<Mat> g, dg;
    g.reserve(n * p);
    dg.reserve(n * p * p);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < p; ++j) g.push_back(gj[j]);
      for (std::size_t q = 0; q < p * p; ++q)
        dg.push_back(gp.empty() ? Mat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) : gp[q]);
    }
    return RoughCoefficient(std::move(ref), d, std::move(g), std::move(dg));
  }

  static RoughCoefficient zero(RoughPathPtr ref, std::size_t d) {
    const std::size_t p = ref->dim();
    return constant(ref, std::vector<Mat>(p, Mat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))));
  }

  const RoughPathPtr& reference() const { return ref_; }
  const RoughPath& rough() const { return *ref_; }
  std::size_t dim() const { return d_; }
  std::size_t noise_dim() const { return ref_->dim(); }
  std::size_t size() const { return ref_->grid().size(); }

  const Mat& value(std::size_t k, std::size_t j) const { return g_[k * noise_dim() + j]; }
  const Mat& deriv(std::size_t k, std::size_t j, std::size_t i) const {
    const std::size_t p = noise_dim();
    return gp_[(k * p + j) * p + i];
  }

  bool is_zero() const {
    for (const auto& m : g_)
      if (!m.isZero(0.0)) return false;
    for (const auto& m : gp_)
      if (!m.isZero(0.0)) return false;
    return true;
  }

  /// Direction j as a controlled path (G_j, G'_{j,.}).
  ControlledPath component(std::size_t j, double beta = 0.4, double beta_prime = 0.4) const {
    const std::size_t n = size(), p = noise_dim();
    std::vector<Mat> z(n), dz(n * p);
    for (std::size_t k = 0; k < n; ++k) {
      z[k] = value(k, j);
      for (std::size_t i = 0; i < p; ++i) dz[k * p + i] = deriv(k, j, i);
    }
    return ControlledPath(ref_, std::move(z), std::move(dz), beta, beta_prime);
  }

  RoughCoefficient operator+(const RoughCoefficient& o) const {
    check(o);
    std::vector<Mat> g(g_), gp(gp_);
    for (std::size_t q = 0; q < g.size(); ++q) g[q] += o.g_[q];
    for (std::size_t q = 0; q < gp.size(); ++q) gp[q] += o.gp_[q];
    return RoughCoefficient(ref_, d_, std::move(g), std::move(gp));
  }

  RoughCoefficient scaled(double c) const {
    std::vector<Mat> g(g_), gp(gp_);
    for (auto& m : g) m *= c;
    for (auto& m : gp) m *= c;
    return RoughCoefficient(ref_, d_, std::move(g), std::move(gp));
  }

  RoughCoefficient transposed() const {
    std::vector<Mat> g(g_.size()), gp(gp_.size());
    for (std::size_t q = 0; q < g.size(); ++q) g[q] = g_[q].transpose();
    for (std::size_t q = 0; q < gp.size(); ++q) gp[q] = gp_[q].transpose();
    return RoughCoefficient(ref_, d_, std::move(g), std::move(gp));
  }

  /// The same node data read against another rough path on the same grid
  /// (used for eta-independent coefficient maps).
  RoughCoefficient rebased(RoughPathPtr other) const {
    if (other->grid() != ref_->grid() || other->dim() != ref_->dim())
      throw ConfigError("rough coefficient: rebase target has a different grid or dimension");
    return RoughCoefficient(std::move(other), d_, g_, gp_);
  }

  /// Every f-th node kept, read against the coarsened rough path.
  RoughCoefficient restricted(RoughPathPtr coarse, std::size_t f) const {
    const std::size_t p = noise_dim();
    std::vector<Mat> g, gp;
    for (std::size_t k = 0; k < size(); k += f) {
      for (std::size_t j = 0; j < p; ++j) g.push_back(value(k, j));
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t i = 0; i < p; ++i) gp.push_back(deriv(k, j, i));
    }
    return RoughCoefficient(std::move(coarse), d_, std::move(g), std::move(gp));
  }

  const std::vector<Mat>& raw_values() const { return g_; }
  const std::vector<Mat>& raw_derivs() const { return gp_; }

 private:
  void check(const RoughCoefficient& o) const {
    if (o.d_ != d_) throw ConfigError("rough coefficient: dimension mismatch");
    if (ref_ != o.ref_ && !(*ref_ == *o.ref_)) throw ConfigError("rough coefficient: different reference rough paths");
  }

  RoughPathPtr ref_;
  std::size_t d_ = 0;
  std::vector<Mat> g_;
  std::vector<Mat> gp_;
};

/// Controlled-path distance between two coefficients living on possibly
/// different rough paths over the same grid: sup|G1 - G2| + sup|G1' - G2'|
/// + grid sup of |R^1_{s,t} - R^2_{s,t}| / |t-s|^{beta+beta'}.
inline double coefficient_distance(const RoughCoefficient& a, const RoughCoefficient& b, double beta, double beta_prime) {
  if (a.dim() != b.dim() || a.noise_dim() != b.noise_dim() || a.rough().grid() != b.rough().grid())
    throw ConfigError("coefficient distance: incompatible coefficients");
  const std::size_t n = a.size(), p = a.noise_dim();
  const auto& g = a.rough().grid();
  double sup0 = 0.0, sup1 = 0.0, rem = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < p; ++j) {
      sup0 = std::max(sup0, (a.value(k, j) - b.value(k, j)).norm());
      for (std::size_t i = 0; i < p; ++i) sup1 = std::max(sup1, (a.deriv(k, j, i) - b.deriv(k, j, i)).norm());
    }
  for (std::size_t s = 0; s + 1 < n; ++s)
    for (std::size_t t = s + 1; t < n; ++t) {
      const Vec da = a.rough().increment(s, t), db = b.rough().increment(s, t);
      for (std::size_t j = 0; j < p; ++j) {
        Mat r = (a.value(t, j) - a.value(s, j)) - (b.value(t, j) - b.value(s, j));
        for (std::size_t i = 0; i < p; ++i)
          r -= a.deriv(s, j, i) * da(static_cast<Eigen::Index>(i)) - b.deriv(s, j, i) * db(static_cast<Eigen::Index>(i));
        rem = std::max(rem, r.norm() / std::pow(g[t] - g[s], beta + beta_prime));
      }
    }
  return sup0 + sup1 + rem;
}

/// Forward and inverse flows of a linear RDE and the Volterra kernel they generate.
struct FlowKernel {
  TimeGrid grid;
  std::size_t d = 0;
  std::vector<Mat> forward;  // U_{t_k <- 0}
  std::vector<Mat> inverse;  // U_{0 <- t_k}

  /// K(t_j, t_k) = U_{t_j <- 0} U_{0 <- t_k}.
  Mat K(std::size_t j, std::size_t k) const { return forward[j] * inverse[k]; }
  std::size_t size() const { return forward.size(); }

  static FlowKernel identity(const TimeGrid& g, std::size_t d) {
    FlowKernel f;
    f.grid = g;
    f.d = d;
    const Mat id = Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    f.forward.assign(g.size(), id);
    f.inverse.assign(g.size(), id);
    return f;
  }
};

namespace detail {

/// Davie matrix for left multiplication on step k:
/// I + G_j d eta^j + (G'_{j,i} + G_j G_i) eta2^{ij}.
inline Mat davie_left(const RoughCoefficient& G, std::size_t k) {
  const std::size_t p = G.noise_dim();
  const auto d = static_cast<Eigen::Index>(G.dim());
  const RoughPath& rp = G.rough();
  const Vec de = rp.step_increment(k);
  const Mat& a = rp.step_area(k);
  Mat m = Mat::Identity(d, d);
  for (std::size_t j = 0; j < p; ++j) {
    m += G.value(k, j) * de(static_cast<Eigen::Index>(j));
    for (std::size_t i = 0; i < p; ++i) {
      const double aij = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (aij == 0.0) continue;
      m += (G.deriv(k, j, i) + G.value(k, j) * G.value(k, i)) * aij;
    }
  }
  return m;
}

/// Davie matrix for the right-multiplied inverse equation dV = -V G d eta:
/// I - G_j d eta^j + (G_i G_j - G'_{j,i}) eta2^{ij}.
inline Mat davie_right_inverse(const RoughCoefficient& G, std::size_t k) {
  const std::size_t p = G.noise_dim();
  const auto d = static_cast<Eigen::Index>(G.dim());
  const RoughPath& rp = G.rough();
  const Vec de = rp.step_increment(k);
  const Mat& a = rp.step_area(k);
  Mat m = Mat::Identity(d, d);
  for (std::size_t j = 0; j < p; ++j) {
    m -= G.value(k, j) * de(static_cast<Eigen::Index>(j));
    for (std::size_t i = 0; i < p; ++i) {
      const double aij = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (aij == 0.0) continue;
      m += (G.value(k, i) * G.value(k, j) - G.deriv(k, j, i)) * aij;
    }
  }
  return m;
}

/// RK4 propagator of Y' = D(t) Y over theta in [a, b] of step k (left = true),
/// or of Y' = -Y D(t) (left = false), started from the identity.
inline Mat drift_propagator(const StepSeries& D, std::size_t k, double dt, double a, double b, bool left) {
  const double h = (b - a) * dt;
  const double m = 0.5 * (a + b);
  const Mat Da = D.at(k, a), Dm = D.at(k, m), Db = D.at(k, b);
  const Mat I = Mat::Identity(Da.rows(), Da.cols());
  if (left) {
    const Mat k1 = Da;
    const Mat k2 = Dm * (I + 0.5 * h * k1);
    const Mat k3 = Dm * (I + 0.5 * h * k2);
    const Mat k4 = Db * (I + h * k3);
    return I + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  const Mat k1 = -Da;
  const Mat k2 = -(I + 0.5 * h * k1) * Dm;
  const Mat k3 = -(I + 0.5 * h * k2) * Dm;
  const Mat k4 = -(I + h * k3) * Db;
  return I + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline void check_invertible(const Mat& U, std::size_t k, double t) {
  const double det = U.determinant();
  const double scale = std::pow(std::max(U.norm(), 1e-300), static_cast<double>(U.rows()));
  if (!std::isfinite(det) || !(std::fabs(det) > 1e-14 * scale))
    throw NumericalError("linear RDE flow became singular at node " + std::to_string(k) + " (t=" + std::to_string(t) +
                         ")");
}

inline void check_drift(const StepSeries* D, const RoughCoefficient& G) {
  if (!D) return;
  if (D->size() != G.size()) throw ConfigError("linear RDE: drift and rough coefficient grids differ");
  if (D->node(0).rows() != static_cast<Eigen::Index>(G.dim()) || D->node(0).cols() != static_cast<Eigen::Index>(G.dim()))
    throw ConfigError("linear RDE: drift must be d x d");
}

}  // namespace detail

/// Inverse flows U_{0 <- t_k}: right-multiplication form of the same split
/// scheme, stepped forward in time.
inline std::vector<Mat> inverse_flow(const RoughCoefficient& G, const StepSeries* drift = nullptr) {
  detail::check_drift(drift, G);
  const TimeGrid& g = G.rough().grid();
  const auto d = static_cast<Eigen::Index>(G.dim());
  std::vector<Mat> V(g.size());
  V[0] = Mat::Identity(d, d);
  for (std::size_t k = 0; k < g.steps(); ++k) {
    Mat step = detail::davie_right_inverse(G, k);
    if (drift)
      step = detail::drift_propagator(*drift, k, g.dt(k), 0.0, 0.5, false) * step *
             detail::drift_propagator(*drift, k, g.dt(k), 0.5, 1.0, false);
    V[k + 1].noalias() = V[k] * step;
    detail::check_invertible(V[k + 1], k + 1, g[k + 1]);
  }
  return V;
}

/// Forward flow U_{t_k <- 0} of dU = D U dt + G U d eta by a Davie step for
/// the rough part, Strang-split with RK4 half steps for the drift when one is
/// given. The stored inverses are LU inverses of the computed forward flow, so
/// K(t,s) = K(t,u) K(u,s) holds up to round-off; inverse_flow() integrates the
/// inverse equation on its own and serves as a cross-check.
inline FlowKernel solve_forward_flow(const RoughCoefficient& G, const StepSeries* drift = nullptr) {
  detail::check_drift(drift, G);
  const TimeGrid& g = G.rough().grid();
  const auto d = static_cast<Eigen::Index>(G.dim());
  FlowKernel out;
  out.grid = g;
  out.d = G.dim();
  out.forward.resize(g.size());
  out.forward[0] = Mat::Identity(d, d);
  for (std::size_t k = 0; k < g.steps(); ++k) {
    Mat step = detail::davie_left(G, k);
    if (drift)
      step = detail::drift_propagator(*drift, k, g.dt(k), 0.5, 1.0, true) * step *
             detail::drift_propagator(*drift, k, g.dt(k), 0.0, 0.5, true);
    out.forward[k + 1].noalias() = step * out.forward[k];
    detail::check_invertible(out.forward[k + 1], k + 1, g[k + 1]);
  }
  out.inverse.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) out.inverse[k] = out.forward[k].partialPivLu().inverse();
  return out;
}

/// The inverse flow as a controlled path: (U_{0<-t}, -U_{0<-t} G_i).
inline ControlledPath inverse_flow_path(const FlowKernel& K, const RoughCoefficient& G, double beta = 0.4,
                                        double beta_prime = 0.4) {
  const std::size_t n = K.size(), p = G.noise_dim();
  std::vector<Mat> z(K.inverse), dz(n * p);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < p; ++i) dz[k * p + i] = -K.inverse[k] * G.value(k, i);
  return ControlledPath(G.reference(), std::move(z), std::move(dz), beta, beta_prime);
}

/// Initial path M_t = K(t,0) int_0^t Z d eta with Z_j = K(0,.) C1_j m and
/// Gubinelli derivative from the product rule. The integral uses the
/// trapezoid-compensated sums because m carries a drift.
inline std::vector<Vec> compute_M(const FlowKernel& K, const RoughCoefficient& A1, const RoughCoefficient& C1,
                                  const ControlledPath& m) {
  const std::size_t n = K.size(), p = A1.noise_dim();
  if (C1.size() != n || A1.size() != n || m.size() != n) throw ConfigError("compute_M: grid mismatch");
  if (m.rows() != static_cast<Eigen::Index>(K.d) || m.cols() != 1) throw ConfigError("compute_M: m must be a d-vector path");
  std::vector<Vec> M(n, Vec::Zero(static_cast<Eigen::Index>(K.d)));
  if (C1.is_zero()) return M;
  const ControlledPath Kinv = inverse_flow_path(K, A1, m.beta(), m.beta_prime());
  Integrand z;
  z.reserve(p);
  for (std::size_t j = 0; j < p; ++j) z.push_back(product(product(Kinv, C1.component(j, m.beta(), m.beta_prime())), m));
  const ControlledPath I = indefinite_integral(z, IntegralRule::Trapezoid);
  for (std::size_t k = 0; k < n; ++k) M[k] = K.forward[k] * I.value(k);
  return M;
}

/// Solution of de = C^T e dt + (C1)^T e d eta, e_0 = Id, and the scalar-multiple test.
struct EResult {
  std::vector<Mat> e;
  std::vector<double> lambda;  // trace(e_t)/d
  bool s4r = false;
  double violation = 0.0;      // max over nodes of (off-diagonal size + diagonal spread) / |e_t|
  std::size_t worst_node = 0;
};

inline EResult solve_e_equation(const StepSeries& C, const RoughCoefficient& C1) {
  std::vector<Mat> ct;
  for (const auto& m : C.nodes()) ct.push_back(m.transpose());
  const StepSeries D = StepSeries::left_constant(std::move(ct));
  const bool drift_zero = [&] {
    for (const auto& m : D.nodes())
      if (!m.isZero(0.0)) return false;
    return true;
  }();
  const FlowKernel f = solve_forward_flow(C1.transposed(), drift_zero ? nullptr : &D);
  EResult r;
  r.e = f.forward;
  r.s4r = true;
  const double d = static_cast<double>(C1.dim());
  for (std::size_t k = 0; k < r.e.size(); ++k) {
    const Mat& e = r.e[k];
    const double lam = e.trace() / d;
    r.lambda.push_back(lam);
    const double diag_spread = e.diagonal().maxCoeff() - e.diagonal().minCoeff();
    Mat off = e;
    off.diagonal().setZero();
    const double scale = std::max(e.norm(), 1e-300);
    const double v = (off.cwiseAbs().maxCoeff() + diag_spread) / scale;
    if (v > r.violation) {
      r.violation = v;
      r.worst_node = k;
    }
    if (v > 1e-8 || !(lam > 0.0)) r.s4r = false;
  }
  return r;
}

/// Path with linear rough dynamics, used by the product-rule residual.
/// Left:  dX = D X dt + G_j X d eta^j.   Right: dX = X D dt + X G_j d eta^j.
struct LinearFlowPath {
  enum class Side { Left, Right };
  std::vector<Mat> values;
  Side side = Side::Left;
  RoughCoefficient G;
  std::optional<StepSeries> D;
};

namespace detail {
inline ControlledPath as_controlled(const LinearFlowPath& x) {
  const std::size_t n = x.values.size(), p = x.G.noise_dim();
  std::vector<Mat> dz(n * p);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < p; ++i)
      dz[k * p + i] = x.side == LinearFlowPath::Side::Left ? Mat(x.G.value(k, i) * x.values[k])
                                                           : Mat(x.values[k] * x.G.value(k, i));
  return ControlledPath(x.G.reference(), x.values, std::move(dz), 0.4, 0.4);
}
inline Mat drift_of(const LinearFlowPath& x, std::size_t k) {
  if (!x.D) return Mat::Zero(x.values[k].rows(), x.values[k].cols());
  const Mat& D = x.D->node(std::min(k, x.D->size() - 2));
  return x.side == LinearFlowPath::Side::Left ? Mat(D * x.values[k]) : Mat(x.values[k] * D);
}
}  // namespace detail

/// Max node deviation of W = XY from W_0 + int (dX) Y + X (dY), where the dt
/// part uses the trapezoid rule and the d eta part compensated sums of the
/// composed controlled integrand.
inline double product_rule_residual(const LinearFlowPath& x, const LinearFlowPath& y) {
  const std::size_t n = x.values.size(), p = x.G.noise_dim();
  if (y.values.size() != n) throw ConfigError("product rule: paths on different grids");
  const ControlledPath X = detail::as_controlled(x), Y = detail::as_controlled(y);
  Integrand z;
  for (std::size_t j = 0; j < p; ++j) {
    const ControlledPath gx = x.G.component(j), gy = y.G.component(j);
    const ControlledPath dxj = x.side == LinearFlowPath::Side::Left ? product(gx, X) : product(X, gx);
    const ControlledPath dyj = y.side == LinearFlowPath::Side::Left ? product(gy, Y) : product(Y, gy);
    z.push_back(product(dxj, Y) + product(X, dyj));
  }
  const TimeGrid& g = x.G.rough().grid();
  Mat acc = x.values[0] * y.values[0];
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const Mat f0 = detail::drift_of(x, k) * y.values[k] + x.values[k] * detail::drift_of(y, k);
    Mat f1 = Mat::Zero(f0.rows(), f0.cols());
    if (x.D || y.D) {
      // left-constant drift: reuse the step-k coefficient at the right end
      const auto at_right = [&](const LinearFlowPath& w) -> Mat {
        if (!w.D) return Mat::Zero(w.values[k + 1].rows(), w.values[k + 1].cols());
        const Mat& D = w.D->node(k);
        return w.side == LinearFlowPath::Side::Left ? Mat(D * w.values[k + 1]) : Mat(w.values[k + 1] * D);
      };
      f1 = at_right(x) * y.values[k + 1] + x.values[k + 1] * at_right(y);
    }
    acc += 0.5 * g.dt(k) * (f0 + f1) + detail::compensated_step(z, k);
    worst = std::max(worst, (x.values[k + 1] * y.values[k + 1] - acc).cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Affine RDE dx = (D x + f) dt + sum_j (G_j x + g_j) d eta^j solved by the
/// same split scheme: RK4 half steps for the drift around a Davie step.
/// g (if non-empty) is one controlled vector path per noise direction.
inline std::vector<Vec> solve_affine_rde(const Vec& x0, const StepSeries* D, const StepSeries* f,
                                         const RoughCoefficient& G, const Integrand& g = {}) {
  const TimeGrid& grid = G.rough().grid();
  const std::size_t n = grid.size(), p = G.noise_dim();
  const auto d = static_cast<Eigen::Index>(G.dim());
  if (x0.size() != d) throw ConfigError("affine RDE: initial value has the wrong size");
  if (!g.empty() && g.size() != p) throw ConfigError("affine RDE: need one rough forcing per noise direction");
  const auto rhs = [&](std::size_t k, double th, const Vec& x) {
    Vec r = Vec::Zero(d);
    if (D) r += D->at(k, th) * x;
    if (f) r += f->at(k, th);
    return r;
  };
  const auto half = [&](std::size_t k, double a, double b, const Vec& x) {
    if (!D && !f) return x;
    const double h = (b - a) * grid.dt(k), m = 0.5 * (a + b);
    const Vec k1 = rhs(k, a, x);
    const Vec k2 = rhs(k, m, x + 0.5 * h * k1);
    const Vec k3 = rhs(k, m, x + 0.5 * h * k2);
    const Vec k4 = rhs(k, b, x + h * k3);
    return Vec(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };
  std::vector<Vec> x(n);
  x[0] = x0;
  const RoughPath& rp = G.rough();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    Vec y = half(k, 0.0, 0.5, x[k]);
    const Vec de = rp.step_increment(k);
    const Mat& a = rp.step_area(k);
    Vec inc = Vec::Zero(d);
    for (std::size_t j = 0; j < p; ++j) {
      Vec vj = G.value(k, j) * y;
      if (!g.empty()) vj += g[j].value(k);
      inc += vj * de(static_cast<Eigen::Index>(j));
      for (std::size_t i = 0; i < p; ++i) {
        const double aij = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (aij == 0.0) continue;
        // derivative of G_j y + g_j in direction i, with y' = G_i y + g_i
        Vec yi = G.value(k, i) * y;
        if (!g.empty()) yi += g[i].value(k);
        Vec dj = G.deriv(k, j, i) * y + G.value(k, j) * yi;
        if (!g.empty()) dj += g[j].deriv(k, i);
        inc += dj * aij;
      }
    }
    y += inc;
    x[k + 1] = half(k, 0.5, 1.0, y);
  }
  return x;
}

}  // namespace rmfg
