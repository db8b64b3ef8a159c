#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rmfg/rough_path.hpp"

namespace rmfg {

using RoughPathPtr = std::shared_ptr<const RoughPath>;

/// Matrix-valued path Z with Gubinelli derivative Z' relative to a rough path.
///
/// Z'_{k,i} has the shape of Z and describes the response of Z to the i-th
/// component of the driving path, so that
///   delta Z_{s,t} = sum_i Z'_{s,i} delta eta^i_{s,t} + R^Z_{s,t}.
/// Vectors are stored as single-column matrices.
class ControlledPath {
 public:
  ControlledPath() = default;

  ControlledPath(RoughPathPtr ref, std::vector<Mat> values, std::vector<Mat> derivs, double beta, double beta_prime)
      : ref_(std::move(ref)), z_(std::move(values)), dz_(std::move(derivs)), beta_(beta), beta_prime_(beta_prime) {
    if (!ref_) throw ConfigError("controlled path needs a reference rough path");
    const std::size_t n = ref_->grid().size();
    const std::size_t p = ref_->dim();
    if (z_.size() != n) throw ConfigError("controlled path needs one value per grid node");
    if (dz_.size() != n * p) throw ConfigError("controlled path needs p derivative blocks per grid node");
    rows_ = z_[0].rows();
    cols_ = z_[0].cols();
    for (const auto& m : z_)
      if (m.rows() != rows_ || m.cols() != cols_) throw ConfigError("controlled path values change shape");
    for (const auto& m : dz_)
      if (m.rows() != rows_ || m.cols() != cols_) throw ConfigError("Gubinelli derivative shape differs from value shape");
  }

  /// Time-constant path with zero derivative.
  static ControlledPath constant(RoughPathPtr ref, const Mat& c, double beta = 0.4, double beta_prime = 0.4) {
    const std::size_t n = ref->grid().size();
    const std::size_t p = ref->dim();
    return ControlledPath(ref, std::vector<Mat>(n, c), std::vector<Mat>(n * p, Mat::Zero(c.rows(), c.cols())), beta,
                          beta_prime);
  }

  /// The first-level path itself, Z = eta (a p-vector) with Z' = identity.
  static ControlledPath identity_path(RoughPathPtr ref, double beta = 0.4, double beta_prime = 0.4) {
    const std::size_t n = ref->grid().size();
    const std::size_t p = ref->dim();
    std::vector<Mat> z(n), dz(n * p);
    for (std::size_t k = 0; k < n; ++k) {
      z[k] = ref->value(k);
      for (std::size_t i = 0; i < p; ++i) {
        dz[k * p + i] = Mat::Zero(static_cast<Eigen::Index>(p), 1);
        dz[k * p + i](static_cast<Eigen::Index>(i), 0) = 1.0;
      }
    }
    return ControlledPath(ref, std::move(z), std::move(dz), beta, beta_prime);
  }

  const RoughPathPtr& reference() const { return ref_; }
  const RoughPath& rough() const { return *ref_; }
  std::size_t size() const { return z_.size(); }
  std::size_t noise_dim() const { return ref_->dim(); }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  double beta() const { return beta_; }
  double beta_prime() const { return beta_prime_; }

  const Mat& value(std::size_t k) const { return z_[k]; }
  /// Derivative block for noise direction i at node k.
  const Mat& deriv(std::size_t k, std::size_t i) const { return dz_[k * noise_dim() + i]; }
  const std::vector<Mat>& values() const { return z_; }

  /// R^Z_{s,t} = delta Z_{s,t} - Z'_s delta eta_{s,t}.
  Mat remainder(std::size_t s, std::size_t t) const {
    Mat r = z_[t] - z_[s];
    const Vec d = ref_->increment(s, t);
    for (std::size_t i = 0; i < noise_dim(); ++i) r -= deriv(s, i) * d(static_cast<Eigen::Index>(i));
    return r;
  }

  /// Grid sup of |R^Z_{s,t}| / |t-s|^{beta+beta'} (Frobenius norm).
  double remainder_seminorm() const {
    double worst = 0.0;
    const auto& g = ref_->grid();
    for (std::size_t s = 0; s + 1 < size(); ++s)
      for (std::size_t t = s + 1; t < size(); ++t)
        worst = std::max(worst, remainder(s, t).norm() / std::pow(g[t] - g[s], beta_ + beta_prime_));
    return worst;
  }

  ControlledPath operator+(const ControlledPath& o) const {
    check_compatible(o, "sum");
    std::vector<Mat> z(z_), dz(dz_);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += o.z_[k];
    for (std::size_t k = 0; k < dz.size(); ++k) dz[k] += o.dz_[k];
    return ControlledPath(ref_, std::move(z), std::move(dz), std::min(beta_, o.beta_), std::min(beta_prime_, o.beta_prime_));
  }

  ControlledPath scaled(double c) const {
    std::vector<Mat> z(z_), dz(dz_);
    for (auto& m : z) m *= c;
    for (auto& m : dz) m *= c;
    return ControlledPath(ref_, std::move(z), std::move(dz), beta_, beta_prime_);
  }

  ControlledPath transposed() const {
    std::vector<Mat> z(z_.size()), dz(dz_.size());
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = z_[k].transpose();
    for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = dz_[k].transpose();
    return ControlledPath(ref_, std::move(z), std::move(dz), beta_, beta_prime_);
  }

 private:
  void check_compatible(const ControlledPath& o, const char* what) const {
    if (ref_ != o.ref_ && !(*ref_ == *o.ref_))
      throw ConfigError(std::string("controlled path ") + what + ": different reference rough paths");
    if (rows_ != o.rows_ || cols_ != o.cols_) throw ConfigError(std::string("controlled path ") + what + ": shape mismatch");
  }

  RoughPathPtr ref_;
  std::vector<Mat> z_;
  std::vector<Mat> dz_;
  Eigen::Index rows_ = 0, cols_ = 0;
  double beta_ = 0.4, beta_prime_ = 0.4;
};

/// Product of controlled paths, (ab, a'b + ab').
inline ControlledPath product(const ControlledPath& a, const ControlledPath& b) {
  if (a.reference() != b.reference() && !(a.rough() == b.rough()))
    throw ConfigError("product: factors are controlled by different rough paths");
  if (a.cols() != b.rows())
    throw ConfigError("product: shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " and " +
                      std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " do not compose");
  const std::size_t n = a.size(), p = a.noise_dim();
  std::vector<Mat> z(n), dz(n * p);
  for (std::size_t k = 0; k < n; ++k) {
    z[k].noalias() = a.value(k) * b.value(k);
    for (std::size_t i = 0; i < p; ++i) {
      dz[k * p + i].noalias() = a.deriv(k, i) * b.value(k);
      dz[k * p + i].noalias() += a.value(k) * b.deriv(k, i);
    }
  }
  return ControlledPath(a.reference(), std::move(z), std::move(dz), std::min(a.beta(), b.beta()),
                        std::min(a.beta_prime(), b.beta_prime()));
}

/// Integrand for int sum_j Z_j d eta^j: one controlled path per noise direction.
using Integrand = std::vector<ControlledPath>;

namespace detail {
inline void check_integrand(const Integrand& z) {
  if (z.empty()) throw ConfigError("rough integral: empty integrand");
  const RoughPath& rp = z[0].rough();
  if (z.size() != rp.dim())
    throw ConfigError("rough integral: need one integrand component per noise direction");
  for (const auto& c : z) {
    if (c.rows() != z[0].rows() || c.cols() != z[0].cols()) throw ConfigError("rough integral: component shapes differ");
    if (&c.rough() != &rp && !(c.rough() == rp)) throw ConfigError("rough integral: components use different rough paths");
    if (!(rp.gamma() + c.beta() + c.beta_prime() > 1.0))
      throw ConfigError("rough integral: gamma + beta + beta' must exceed 1");
  }
}

/// Compensated increment over [t_k, t_{k+1}].
inline Mat compensated_step(const Integrand& z, std::size_t k) {
  const RoughPath& rp = z[0].rough();
  const std::size_t p = rp.dim();
  const Vec d = rp.step_increment(k);
  const Mat& a = rp.step_area(k);
  Mat out = Mat::Zero(z[0].rows(), z[0].cols());
  for (std::size_t j = 0; j < p; ++j) {
    out += z[j].value(k) * d(static_cast<Eigen::Index>(j));
    for (std::size_t i = 0; i < p; ++i)
      out += z[j].deriv(k, i) * a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return out;
}

/// Trapezoid variant over [t_k, t_{k+1}]: the mean of the end values against
/// d eta, plus Z'_k applied to eta2 - 1/2 d eta (x) d eta (the antisymmetric
/// area on geometric paths). Same limit as the compensated sum, but second
/// order when the integrand also has a drift component.
inline Mat trapezoid_step(const Integrand& z, std::size_t k) {
  const RoughPath& rp = z[0].rough();
  const std::size_t p = rp.dim();
  const Vec d = rp.step_increment(k);
  const Mat& a = rp.step_area(k);
  Mat out = Mat::Zero(z[0].rows(), z[0].cols());
  for (std::size_t j = 0; j < p; ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    out += 0.5 * (z[j].value(k) + z[j].value(k + 1)) * d(J);
    for (std::size_t i = 0; i < p; ++i) {
      const auto I = static_cast<Eigen::Index>(i);
      out += z[j].deriv(k, i) * (a(I, J) - 0.5 * d(I) * d(J));
    }
  }
  return out;
}
}  // namespace detail

/// Compensated Riemann sum of int_{t_s}^{t_t} Z d eta over the grid partition:
/// sum over steps of Z_j delta eta^j + Z'_{j,i} eta2^{ij}.
inline Mat rough_integral(const Integrand& z, std::size_t s, std::size_t t) {
  detail::check_integrand(z);
  if (s > t || t >= z[0].size()) throw ConfigError("rough integral: bad node range");
  Mat out = Mat::Zero(z[0].rows(), z[0].cols());
  for (std::size_t k = s; k < t; ++k) out += detail::compensated_step(z, k);
  return out;
}

/// Scalar-noise convenience: integrand with a single component.
inline Mat rough_integral(const ControlledPath& z, std::size_t s, std::size_t t) {
  return rough_integral(Integrand{z}, s, t);
}

enum class IntegralRule { Compensated, Trapezoid };

/// X_t = int_0^t Z d eta as a controlled path with X' = Z and exponents (gamma, beta).
inline ControlledPath indefinite_integral(const Integrand& z, IntegralRule rule = IntegralRule::Compensated) {
  detail::check_integrand(z);
  const std::size_t n = z[0].size(), p = z.size();
  std::vector<Mat> x(n), dx(n * p);
  x[0] = Mat::Zero(z[0].rows(), z[0].cols());
  for (std::size_t k = 0; k + 1 < n; ++k)
    x[k + 1] = x[k] + (rule == IntegralRule::Trapezoid ? detail::trapezoid_step(z, k) : detail::compensated_step(z, k));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < p; ++i) dx[k * p + i] = z[i].value(k);
  return ControlledPath(z[0].reference(), std::move(x), std::move(dx), z[0].rough().gamma(), z[0].beta());
}

/// Maximal remainder over node pairs at dyadic index distances 1, 2, 4, ...
struct RemainderScale {
  double scale;          // largest time span among the pairs at this distance
  double max_remainder;  // max Frobenius norm of R^Z over those pairs
};

inline std::vector<RemainderScale> remainder_profile(const ControlledPath& z) {
  std::vector<RemainderScale> out;
  const auto& g = z.rough().grid();
  for (std::size_t h = 1; h < z.size(); h *= 2) {
    double span = 0.0, worst = 0.0;
    for (std::size_t s = 0; s + h < z.size(); ++s) {
      span = std::max(span, g[s + h] - g[s]);
      worst = std::max(worst, z.remainder(s, s + h).norm());
    }
    out.push_back({span, worst});
  }
  return out;
}

/// Least-squares slope of log y against log x, skipping non-positive entries.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return 0.0;
  const double den = n * sxx - sx * sx;
  return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

}  // namespace rmfg
