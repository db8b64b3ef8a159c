#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rmfg/riccati.hpp"

namespace rmfg {

/// All data of one rough LQ mean-field game on a grid.
struct ProblemSpec {
  TimeGrid grid;
  std::size_t d = 1, p = 1, q = 1, kappa = 1;
  double gamma = 0.4, beta = 0.4, beta_prime = 0.4;
  DriftSpec drift;
  CostSpec cost;
  RoughPathPtr eta;
  RoughCoefficient A1, C1;
  Vec mean0;
  Mat cov0;  // zero matrix for a point mass
  bool allow_s4r_violation = false;

  bool point_mass() const { return cov0.size() == 0 || cov0.isZero(0.0); }

  /// Shape and assumption checks; symmetrises the cost matrices.
  void validate() {
    const std::size_t n = grid.size();
    const auto D = static_cast<Eigen::Index>(d), K = static_cast<Eigen::Index>(kappa), Qn = static_cast<Eigen::Index>(q);
    if (d == 0 || p == 0 || q == 0 || kappa == 0) throw ConfigError("dimensions must be positive");
    if (!eta) throw ConfigError("no rough path");
    if (eta->grid() != grid) throw ConfigError("rough path grid differs from the problem grid");
    if (eta->dim() != p) throw ConfigError("rough path dimension differs from p");
    if (!(gamma > 1.0 / 3.0 && gamma < 0.5)) throw AssumptionError("S1-R", "gamma must lie in (1/3, 1/2)");
    if (!(gamma + beta + beta_prime > 1.0)) throw AssumptionError("S1-R", "gamma + beta + beta' must exceed 1");
    if (A1.dim() != d || C1.dim() != d || A1.noise_dim() != p || C1.noise_dim() != p)
      throw ConfigError("rough coefficients have the wrong shape");
    if (&A1.rough() != eta.get() && !(A1.rough() == *eta)) throw ConfigError("A1 is controlled by a different rough path");
    if (&C1.rough() != eta.get() && !(C1.rough() == *eta)) throw ConfigError("C1 is controlled by a different rough path");
    const auto per_node = [&](const std::vector<Mat>& v, Eigen::Index r, Eigen::Index c, const char* name) {
      if (v.size() != n) throw ConfigError(std::string("drift: ") + name + " needs one value per grid node");
      for (const auto& m : v) {
        if (m.rows() != r || m.cols() != c) throw ConfigError(std::string("drift: ") + name + " has the wrong shape");
        if (!m.allFinite()) throw InputError(std::string("drift: ") + name + " has non-finite entries");
      }
    };
    per_node(drift.A, D, D, "A");
    per_node(drift.B, D, K, "B");
    per_node(drift.C, D, D, "C");
    per_node(drift.Sigma, D, Qn, "Sigma");
    validate_cost(cost, grid, d, kappa);
    if (mean0.size() != D) throw ConfigError("initial mean has the wrong size");
    if (cov0.size() != 0) {
      if (cov0.rows() != D || cov0.cols() != D) throw ConfigError("initial covariance has the wrong shape");
      cov0 = 0.5 * (cov0 + cov0.transpose());
      detail::require_psd(cov0, "S2", "initial covariance");
    }
  }

  /// The same problem read on every f-th node, with the rough path aggregated by Chen.
  ProblemSpec coarsened(std::size_t f) const {
    ProblemSpec s = *this;
    s.grid = grid.coarsened(f);
    s.eta = std::make_shared<const RoughPath>(eta->coarsened(f));
    s.A1 = A1.restricted(s.eta, f);
    s.C1 = C1.restricted(s.eta, f);
    s.drift = drift.coarsened(f);
    s.cost = cost.coarsened(f);
    return s;
  }

  /// The same coefficients driven by another rough path on the same grid.
  ProblemSpec with_path(RoughPathPtr other) const {
    ProblemSpec s = *this;
    s.eta = other;
    s.A1 = A1.rebased(other);
    s.C1 = C1.rebased(other);
    return s;
  }

  RoughCoefficient G() const { return A1 + C1; }
};

}  // namespace rmfg
