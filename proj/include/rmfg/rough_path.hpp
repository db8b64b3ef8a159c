#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rmfg/errors.hpp"
#include "rmfg/random.hpp"
#include "rmfg/time_grid.hpp"

namespace rmfg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Level-2 rough path sampled on a grid.
///
/// Only the area of each consecutive interval is stored. The area of a longer
/// interval [t_i, t_j] is *defined* by folding Chen's relation left to right,
/// so the two-parameter object is multiplicative by construction.
///
/// Convention: area(s,t)(a,b) = int_s^t (eta^a_r - eta^a_s) d eta^b_r.
class RoughPath {
 public:
  RoughPath() = default;

  RoughPath(TimeGrid grid, Mat values, std::vector<Mat> areas, double gamma, bool geometric)
      : grid_(std::move(grid)), x_(std::move(values)), a_(std::move(areas)), gamma_(gamma), geometric_(geometric) {
    if (x_.rows() < 1) throw ConfigError("rough path dimension must be at least 1");
    if (static_cast<std::size_t>(x_.cols()) != grid_.size())
      throw ConfigError("rough path needs one value per grid node");
    if (a_.size() != grid_.steps()) throw ConfigError("rough path needs one area per grid interval");
    if (!(gamma_ > 1.0 / 3.0 && gamma_ < 0.5)) throw ConfigError("Hoelder exponent gamma must lie in (1/3, 1/2)");
    for (const auto& a : a_)
      if (a.rows() != x_.rows() || a.cols() != x_.rows()) throw ConfigError("area blocks must be p x p");
    if (!x_.allFinite()) throw InputError("rough path values must be finite");
    for (const auto& a : a_)
      if (!a.allFinite()) throw InputError("rough path areas must be finite");
  }

  const TimeGrid& grid() const { return grid_; }
  std::size_t dim() const { return static_cast<std::size_t>(x_.rows()); }
  std::size_t steps() const { return grid_.steps(); }
  double gamma() const { return gamma_; }
  bool geometric() const { return geometric_; }

  const Mat& values() const { return x_; }
  Vec value(std::size_t k) const { return x_.col(static_cast<Eigen::Index>(k)); }
  Vec increment(std::size_t s, std::size_t t) const {
    return x_.col(static_cast<Eigen::Index>(t)) - x_.col(static_cast<Eigen::Index>(s));
  }
  /// Increment over the single interval [t_k, t_{k+1}].
  Vec step_increment(std::size_t k) const { return increment(k, k + 1); }
  /// Stored area of [t_k, t_{k+1}].
  const Mat& step_area(std::size_t k) const { return a_[k]; }
  const std::vector<Mat>& areas() const { return a_; }

  /// Area of [t_s, t_t], s <= t, reconstructed by Chen's relation.
  Mat area(std::size_t s, std::size_t t) const {
    const Eigen::Index p = static_cast<Eigen::Index>(dim());
    Mat out = Mat::Zero(p, p);
    for (std::size_t k = s; k < t; ++k) out += a_[k] + increment(s, k) * step_increment(k).transpose();
    return out;
  }

  /// Every f-th node kept; areas merged with Chen's relation.
  RoughPath coarsened(std::size_t f) const {
    TimeGrid g = grid_.coarsened(f);
    Mat x(x_.rows(), static_cast<Eigen::Index>(g.size()));
    std::vector<Mat> a;
    a.reserve(g.steps());
    for (std::size_t k = 0; k < g.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = x_.col(static_cast<Eigen::Index>(k * f));
    for (std::size_t k = 0; k < g.steps(); ++k) a.push_back(area(k * f, (k + 1) * f));
    return RoughPath(std::move(g), std::move(x), std::move(a), gamma_, geometric_);
  }

  /// Same increments and areas, all values moved by c.
  RoughPath shifted(const Vec& c) const {
    Mat x = x_;
    x.colwise() += c;
    return RoughPath(grid_, std::move(x), a_, gamma_, geometric_);
  }

  bool operator==(const RoughPath& o) const {
    return grid_ == o.grid_ && gamma_ == o.gamma_ && geometric_ == o.geometric_ && x_ == o.x_ && a_ == o.a_;
  }

 private:
  TimeGrid grid_;
  Mat x_;               // p x (N+1)
  std::vector<Mat> a_;  // N blocks of p x p
  double gamma_ = 0.4;
  bool geometric_ = true;
};

/// Zero rough path of dimension p on a grid.
inline RoughPath zero_rough_path(const TimeGrid& grid, std::size_t p, double gamma = 0.4) {
  return RoughPath(grid, Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(grid.size())),
                   std::vector<Mat>(grid.steps(), Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))),
                   gamma, true);
}

/// Canonical lift of a path sampled on a fine grid, read off on a target grid
/// whose nodes are a subset of the fine nodes. The area of each target
/// interval is the trapezoid sum of int delta eta (x) d eta over the fine
/// subintervals (the iterated integral of the piecewise-linear interpolant),
/// after which the symmetric part is reset to exactly half the tensor square.
inline RoughPath canonical_lift(const TimeGrid& fine, const Mat& samples, const TimeGrid& target, double gamma = 0.4) {
  if (static_cast<std::size_t>(samples.cols()) != fine.size())
    throw ConfigError("canonical_lift: one sample per refinement node required");
  if (samples.rows() < 1) throw ConfigError("canonical_lift: path dimension must be at least 1");
  if (!samples.allFinite()) throw InputError("canonical_lift: non-finite sample");
  if (fine.steps() < target.steps()) throw ConfigError("canonical_lift: samples coarser than target grid");
  const double tol = 1e-12 * std::max(1.0, target.horizon());
  if (std::fabs(fine.horizon() - target.horizon()) > tol)
    throw ConfigError("canonical_lift: refinement and target horizons differ");

  // Locate each target node among the fine nodes.
  std::vector<std::size_t> idx(target.size());
  std::size_t j = 0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    while (j < fine.size() && fine[j] < target[k] - tol) ++j;
    if (j == fine.size() || std::fabs(fine[j] - target[k]) > tol)
      throw ConfigError("canonical_lift: target node t=" + std::to_string(target[k]) + " is not a refinement node");
    idx[k] = j;
  }

  const Eigen::Index p = samples.rows();
  Mat x(p, static_cast<Eigen::Index>(target.size()));
  std::vector<Mat> areas;
  areas.reserve(target.steps());
  for (std::size_t k = 0; k < target.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = samples.col(static_cast<Eigen::Index>(idx[k]));
  for (std::size_t k = 0; k < target.steps(); ++k) {
    const Vec base = samples.col(static_cast<Eigen::Index>(idx[k]));
    Mat a = Mat::Zero(p, p);
    for (std::size_t r = idx[k]; r < idx[k + 1]; ++r) {
      const Vec lo = samples.col(static_cast<Eigen::Index>(r));
      const Vec hi = samples.col(static_cast<Eigen::Index>(r + 1));
      a.noalias() += (0.5 * (lo + hi) - base) * (hi - lo).transpose();
    }
    const Vec d = x.col(static_cast<Eigen::Index>(k + 1)) - x.col(static_cast<Eigen::Index>(k));
    const Mat anti = 0.5 * (a - a.transpose());
    areas.push_back(anti + 0.5 * d * d.transpose());
  }
  return RoughPath(target, std::move(x), std::move(areas), gamma, true);
}

/// Samples f on target.refined(r) and lifts canonically.
inline RoughPath canonical_lift(const std::function<Vec(double)>& f, const TimeGrid& target, std::size_t r,
                                double gamma = 0.4) {
  const TimeGrid fine = target.refined(r);
  Vec first = f(0.0);
  Mat s(first.size(), static_cast<Eigen::Index>(fine.size()));
  for (std::size_t k = 0; k < fine.size(); ++k) s.col(static_cast<Eigen::Index>(k)) = f(fine[k]);
  return canonical_lift(fine, s, target, gamma);
}

/// Brownian sample path on grid.refined(r), starting at zero. Increment of
/// fine step n in component j uses draw n*p + j of the lift stream of seed.
inline Mat brownian_samples(std::uint64_t seed, std::size_t p, const TimeGrid& grid, std::size_t r) {
  if (p < 1) throw ConfigError("Brownian lift: dimension must be at least 1");
  if (r < 1) throw ConfigError("Brownian lift: refinement factor must be at least 1");
  const TimeGrid fine = grid.refined(r);
  const RandomStream rs(seed, RandomStream::kLiftStream);
  Mat w = Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(fine.size()));
  for (std::size_t n = 0; n < fine.steps(); ++n) {
    const double sd = std::sqrt(fine.dt(n));
    for (std::size_t j = 0; j < p; ++j)
      w(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n + 1)) =
          w(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) + sd * rs.normal(n * p + j);
  }
  return w;
}

/// Stratonovich lift of a Brownian motion: midpoint sums on the r-fold
/// refined grid, symmetric part corrected to half the tensor square.
inline RoughPath brownian_stratonovich_lift(std::uint64_t seed, std::size_t p, const TimeGrid& grid, std::size_t r = 16,
                                            double gamma = 0.4) {
  return canonical_lift(grid.refined(r), brownian_samples(seed, p, grid, r), grid, gamma);
}

/// Scale used to normalise Chen residuals: 1 + (2 sup|eta_t - eta_0|)^2 + sum of stored area sizes,
/// which bounds every reconstructed area and every increment product.
inline double chen_scale(const RoughPath& rp) {
  double sup = 0.0, asum = 0.0;
  for (std::size_t k = 0; k < rp.grid().size(); ++k) sup = std::max(sup, rp.increment(0, k).cwiseAbs().maxCoeff());
  for (const auto& a : rp.areas()) asum += a.cwiseAbs().maxCoeff();
  return 1.0 + 4.0 * sup * sup + asum;
}

/// Largest entrywise violation of Chen's relation over every node triple
/// s < u < t, with all two-parameter areas reconstructed from storage.
/// Cost is O(N^3 p^2); the table of reconstructed areas takes O(N^2 p^2) memory.
inline double chen_residual(const RoughPath& rp) {
  const std::size_t n = rp.grid().size();
  const std::size_t p = rp.dim();
  if (n < 3) return 0.0;
  std::vector<std::vector<double>> x(p, std::vector<double>(n));
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t k = 0; k < n; ++k) x[a][k] = rp.values()(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k));
  double worst = 0.0;
  std::vector<double> row(n * n);  // row[i*n+j] = A(i,j) for j >= i
  using Seg = Eigen::Map<const Eigen::ArrayXd>;
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < p; ++b) {
      const double* xa = x[a].data();
      const double* xb = x[b].data();
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        row[i * n + i] = 0.0;
        for (std::size_t k = i; k + 1 < n; ++k) {
          acc += rp.step_area(k)(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +
                 (xa[k] - xa[i]) * (xb[k + 1] - xb[k]);
          row[i * n + k + 1] = acc;
        }
      }
      // For a fixed pair (i,u) the residual is a contiguous expression in t.
      // Tiles of (i, u, t) keep both rows A(i,.) and A(u,.) in L1.
      constexpr std::size_t kB = 16, kC = 256;
      for (std::size_t i0 = 0; i0 < n; i0 += kB) {
        const std::size_t i1 = std::min(n, i0 + kB);
        for (std::size_t u0 = i0; u0 < n; u0 += kB) {
          const std::size_t u1 = std::min(n, u0 + kB);
          for (std::size_t t0 = u0 + 1; t0 < n; t0 += kC) {
            const std::size_t t1 = std::min(n, t0 + kC);
            for (std::size_t u = std::max(u0, i0 + 1); u < u1; ++u) {
              const std::size_t ts = std::max(t0, u + 1);
              if (ts >= t1) continue;
              const Eigen::Index len = static_cast<Eigen::Index>(t1 - ts);
              const double* ru = &row[u * n];
              const Seg aut(ru + ts, len), xbt(xb + ts, len);
              for (std::size_t i = i0; i < i1 && i < u; ++i) {
                const double* ri = &row[i * n];
                const Seg ait(ri + ts, len);
                const double m = ((ait - ri[u] - aut) - (xa[u] - xa[i]) * (xbt - xb[u])).abs().maxCoeff();
                worst = m > worst ? m : worst;
              }
            }
          }
        }
      }
    }
  }
  return worst;
}

namespace detail {
// Double-double arithmetic for the exact Chen reference below.
struct DD {
  double hi = 0.0, lo = 0.0;
};
inline DD two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}
inline DD dd_add(DD a, DD b) {
  DD s = two_sum(a.hi, b.hi);
  s.lo += a.lo + b.lo;
  return two_sum(s.hi, s.lo);
}
inline DD dd_neg(DD a) { return {-a.hi, -a.lo}; }
inline DD dd_mul(DD a, DD b) {
  const double p = a.hi * b.hi;
  const double e = std::fma(a.hi, b.hi, -p) + (a.hi * b.lo + a.lo * b.hi);
  return two_sum(p, e);
}
}  // namespace detail

/// Certified upper bound on chen_residual in O(N^2 p^2) time.
///
/// Every reconstructed area A(i,t) is compared with the exact real-number
/// Chen fold of the stored data, evaluated in double-double arithmetic via
/// A(i,t) = S_t - S_i - (x_i - x_0)(x_t - x_i) with S the fold from t_0. The
/// exact residual of the reference vanishes, so the floating-point residual of
/// any triple is at most the three reconstruction errors plus the rounding of
/// the residual formula itself, which is bounded by 8u times the operand sizes.
inline double chen_residual_bound(const RoughPath& rp) {
  using detail::DD;
  const std::size_t n = rp.grid().size();
  const std::size_t p = rp.dim();
  if (n < 3) return 0.0;
  const auto X = [&](std::size_t a, std::size_t k) {
    return rp.values()(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k));
  };
  constexpr double u = 0x1.0p-53;
  double worst = 0.0;
  std::vector<DD> S(n), dx0(n);
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < p; ++b) {
      for (std::size_t k = 0; k < n; ++k) dx0[k] = detail::two_sum(X(a, k), -X(a, 0));
      S[0] = DD{};
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const DD step = detail::two_sum(X(b, k + 1), -X(b, k));
        DD term = detail::dd_mul(dx0[k], step);
        term = detail::dd_add(term, DD{rp.step_area(k)(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), 0.0});
        S[k + 1] = detail::dd_add(S[k], term);
      }
      double err = 0.0, amax = 0.0, dmax = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        dmax = std::max(dmax, std::fabs(X(a, k) - X(a, 0)));
        dmax = std::max(dmax, std::fabs(X(b, k) - X(b, 0)));
      }
      dmax *= 2.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = i; k + 1 < n; ++k) {
          acc += rp.step_area(k)(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +
                 (X(a, k) - X(a, i)) * (X(b, k + 1) - X(b, k));
          const std::size_t t = k + 1;
          const DD cross = detail::dd_mul(dx0[i], detail::two_sum(X(b, t), -X(b, i)));
          const DD exact = detail::dd_add(detail::dd_add(S[t], detail::dd_neg(S[i])), detail::dd_neg(cross));
          const DD diff = detail::dd_add(DD{acc, 0.0}, detail::dd_neg(exact));
          err = std::max(err, std::fabs(diff.hi) + std::fabs(diff.lo));
          amax = std::max(amax, std::fabs(acc));
        }
      }
      const double bound = 3.0 * err * (1.0 + 4.0 * u) + 8.0 * u * (3.0 * amax + dmax * dmax) + 1e-300;
      worst = std::max(worst, bound);
    }
  }
  return worst;
}

/// max over stored intervals of |Sym(area) - delta eta (x) delta eta / 2|.
inline double geometric_residual(const RoughPath& rp) {
  double worst = 0.0;
  for (std::size_t k = 0; k < rp.steps(); ++k) {
    const Vec d = rp.step_increment(k);
    const Mat& a = rp.step_area(k);
    worst = std::max(worst, (0.5 * (a + a.transpose()) - 0.5 * d * d.transpose()).cwiseAbs().maxCoeff());
  }
  return worst;
}

namespace detail {
inline void require_same_grid(const RoughPath& a, const RoughPath& b, const char* what) {
  if (a.grid() != b.grid()) throw ConfigError(std::string(what) + ": rough paths live on different grids");
  if (a.dim() != b.dim()) throw ConfigError(std::string(what) + ": rough paths have different dimensions");
}
}  // namespace detail

/// Hoelder seminorm |delta eta|_gamma + |eta2|_{2 gamma}^{1/2}, both sups over grid pairs.
/// Vectors use the Euclidean norm, matrices the Frobenius norm.
inline double hoelder_seminorm(const RoughPath& rp) {
  const std::size_t n = rp.grid().size();
  const Eigen::Index p = static_cast<Eigen::Index>(rp.dim());
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t s = 0; s + 1 < n; ++s) {
    Mat a = Mat::Zero(p, p);
    for (std::size_t t = s + 1; t < n; ++t) {
      a += rp.step_area(t - 1) + rp.increment(s, t - 1) * rp.step_increment(t - 1).transpose();
      const double h = rp.grid()[t] - rp.grid()[s];
      s1 = std::max(s1, rp.increment(s, t).norm() / std::pow(h, rp.gamma()));
      s2 = std::max(s2, a.norm() / std::pow(h, 2.0 * rp.gamma()));
    }
  }
  return s1 + std::sqrt(s2);
}

/// Inhomogeneous metric |eta_0 - bar eta_0| + |delta eta - delta bar eta|_gamma + |eta2 - bar eta2|_{2 gamma}.
inline double rough_metric(const RoughPath& a, const RoughPath& b) {
  detail::require_same_grid(a, b, "rough_metric");
  if (a.gamma() != b.gamma()) throw ConfigError("rough_metric: paths carry different Hoelder exponents");
  const std::size_t n = a.grid().size();
  const Eigen::Index p = static_cast<Eigen::Index>(a.dim());
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t s = 0; s + 1 < n; ++s) {
    Mat aa = Mat::Zero(p, p), bb = Mat::Zero(p, p);
    for (std::size_t t = s + 1; t < n; ++t) {
      aa += a.step_area(t - 1) + a.increment(s, t - 1) * a.step_increment(t - 1).transpose();
      bb += b.step_area(t - 1) + b.increment(s, t - 1) * b.step_increment(t - 1).transpose();
      const double h = a.grid()[t] - a.grid()[s];
      s1 = std::max(s1, (a.increment(s, t) - b.increment(s, t)).norm() / std::pow(h, a.gamma()));
      s2 = std::max(s2, (aa - bb).norm() / std::pow(h, 2.0 * a.gamma()));
    }
  }
  return (a.value(0) - b.value(0)).norm() + s1 + s2;
}

/// rho_gamma(eta, 0), the size used for stability balls.
inline double rough_size(const RoughPath& a) { return rough_metric(a, zero_rough_path(a.grid(), a.dim(), a.gamma())); }

}  // namespace rmfg
