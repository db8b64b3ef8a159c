#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <thread>
#include <utility>
#include <vector>

#include "rmfg/monte_carlo.hpp"

namespace rmfg {

/// One comparison: two specs on the same grid, usually differing only in the
/// rough path and the initial law.
struct PerturbationPair {
  ProblemSpec first, second;
};

struct PerturbationPlan {
  ProblemSpec base;
  std::vector<PerturbationPair> pairs;
  /// Ball radius M for rho(eta_1) + rho(eta_2).
  double bound = 10.0;
};

struct PairReport {
  double num_mean = 0.0;  // sup_t |m^2 - m^1|
  double num_ctrl = 0.0;  // sup_t of gain and offset differences
  double num_J = 0.0;     // |J^2 - J^1|
  double num_law = 0.0;   // E |X^2 - X^1|_gamma under shared (xi, W)
  double den_xi = 0.0, den_eta = 0.0, den_A1 = 0.0, den_C1 = 0.0;
  double den = 0.0, ratio = 0.0;

  double max_numerator() const { return std::max({num_mean, num_ctrl, num_J, num_law}); }
};

struct StabilityReport {
  std::vector<PairReport> pairs;
  double max_ratio = 0.0, median_ratio = 0.0;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `workers` threads; fn writes by index.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// |Z_0| plus the grid Hoelder seminorm of exponent gamma.
inline double hoelder_norm(const TimeGrid& g, const std::vector<Vec>& z, double gamma) {
  double out = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a)
    for (std::size_t b = a + 1; b < z.size(); ++b)
      out = std::max(out, (z[b] - z[a]).norm() / std::pow(g[b] - g[a], gamma));
  return out + z.front().norm();
}

/// L^2 distance of two Gaussian initial laws under the shared-draw coupling.
inline double initial_law_distance(const ProblemSpec& a, const ProblemSpec& b) {
  const auto root = [](const ProblemSpec& s) {
    const auto D = static_cast<Eigen::Index>(s.d);
    return s.point_mass() ? Mat(Mat::Zero(D, D)) : psd_sqrt(s.cov0);
  };
  const double dm = (a.mean0 - b.mean0).squaredNorm();
  const double dc = (root(a) - root(b)).squaredNorm();
  return std::sqrt(dm + dc);
}

inline double feedback_distance(const Feedback& a, const Feedback& b) {
  double out = 0.0;
  for (std::size_t k = 0; k < a.gain.size(); ++k)
    out = std::max(out, (a.gain[k] - b.gain[k]).norm() + (a.offset[k] - b.offset[k]).norm());
  return out;
}

}  // namespace detail

inline void validate_plan(const PerturbationPlan& plan) {
  for (const auto& pr : plan.pairs) {
    for (const ProblemSpec* s : {&pr.first, &pr.second}) {
      if (!(s->grid == plan.base.grid)) throw ConfigError("perturbation plan: grids differ");
      if (s->d != plan.base.d || s->p != plan.base.p || s->q != plan.base.q || s->kappa != plan.base.kappa)
        throw ConfigError("perturbation plan: dimensions differ");
    }
    const double size = rough_size(*pr.first.eta) + rough_size(*pr.second.eta);
    if (size > plan.bound)
      throw ConfigError("perturbation plan: pair leaves the ball (" + std::to_string(size) + " > " +
                        std::to_string(plan.bound) + ")");
  }
}

/// Solves both specs of every pair, simulates them on shared draws and
/// returns the numerator pieces and the denominator of the stability estimate.
/// The ratio uses the largest numerator piece; identical specs give exact zeros.
inline PairReport compare_pair(const PerturbationPair& pr, const SimConfig& cfg) {
  PairReport r;
  const Equilibrium e1 = solve_fbrde(pr.first), e2 = solve_fbrde(pr.second);
  r.num_mean = sup_distance(e1.m, e2.m);
  r.num_ctrl = detail::feedback_distance(e1.feedback, e2.feedback);
  r.num_J = std::abs(value_formula(pr.second, e2) - value_formula(pr.first, e1));
  SimConfig c = cfg;
  c.keep_paths = c.n_paths;
  c.threads = 1;
  c.control = ControlArm::optimal();
  const SimResult s1 = simulate(pr.first, e1, c), s2 = simulate(pr.second, e2, c);
  std::vector<Vec> diff(pr.first.grid.size());
  double law = 0.0;
  for (std::size_t i = 0; i < s1.paths.size(); ++i) {
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = s2.paths[i][k] - s1.paths[i][k];
    law += detail::hoelder_norm(pr.first.grid, diff, pr.first.gamma);
  }
  r.num_law = law / static_cast<double>(s1.paths.size());
  r.den_xi = detail::initial_law_distance(pr.first, pr.second);
  r.den_eta = rough_metric(*pr.first.eta, *pr.second.eta);
  r.den_A1 = coefficient_distance(pr.first.A1, pr.second.A1, pr.first.beta, pr.first.beta_prime);
  r.den_C1 = coefficient_distance(pr.first.C1, pr.second.C1, pr.first.beta, pr.first.beta_prime);
  r.den = r.den_xi + r.den_eta + r.den_A1 + r.den_C1;
  const double num = r.max_numerator();
  r.ratio = num == 0.0 ? 0.0 : num / r.den;
  return r;
}

inline StabilityReport run_stability(const PerturbationPlan& plan, const SimConfig& cfg) {
  validate_plan(plan);
  StabilityReport rep;
  rep.pairs.resize(plan.pairs.size());
  detail::parallel_for(plan.pairs.size(), worker_count(cfg.threads),
                       [&](std::size_t i) { rep.pairs[i] = compare_pair(plan.pairs[i], cfg); });
  std::vector<double> ratios;
  for (const auto& p : rep.pairs)
    if (p.den > 0.0) ratios.push_back(p.ratio);
  if (!ratios.empty()) {
    rep.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    std::sort(ratios.begin(), ratios.end());
    const std::size_t h = ratios.size() / 2;
    rep.median_ratio = ratios.size() % 2 ? ratios[h] : 0.5 * (ratios[h - 1] + ratios[h]);
  }
  return rep;
}

/// Fine samples of the driving path on the r-fold refined grid, from which
/// perturbed lifts are rebuilt.
struct PathSamples {
  TimeGrid fine;
  Mat values;  // p x fine nodes
  std::size_t refine = 1;

  static PathSamples brownian(std::uint64_t seed, std::size_t p, const TimeGrid& g, std::size_t r) {
    return {g.refined(r), brownian_samples(seed, p, g, r), r};
  }
  static PathSamples smooth(const std::function<Vec(double)>& f, const TimeGrid& g, std::size_t r) {
    const TimeGrid fine = g.refined(r);
    Mat v(f(fine[0]).size(), static_cast<Eigen::Index>(fine.size()));
    for (std::size_t k = 0; k < fine.size(); ++k) v.col(static_cast<Eigen::Index>(k)) = f(fine[k]);
    return {fine, v, r};
  }

  PathSamples plus(double eps, const Mat& direction) const { return {fine, values + eps * direction, refine}; }
  RoughPathPtr lift(const TimeGrid& target, double gamma) const {
    return std::make_shared<const RoughPath>(canonical_lift(fine, values, target, gamma));
  }
};

/// Two specs sharing everything except a driving path perturbed by
/// eps * direction on the fine samples.
inline PerturbationPair path_pair(const ProblemSpec& base, const PathSamples& src, const Mat& direction, double eps) {
  return {base.with_path(src.lift(base.grid, base.gamma)),
          base.with_path(src.plus(eps, direction).lift(base.grid, base.gamma))};
}

struct ModulusRow {
  double eps = 0.0, rho = 0.0, distance = 0.0;
};

/// Output distance sup|m_eps - m_0| + feedback distance along a ladder of
/// perturbation sizes in a fixed direction.
inline std::vector<ModulusRow> lyons_map_modulus(const ProblemSpec& base, const PathSamples& src,
                                                 const std::function<Vec(double)>& bump,
                                                 const std::vector<double>& ladder, unsigned threads = 0) {
  Mat dir(src.values.rows(), src.values.cols());
  for (std::size_t k = 0; k < src.fine.size(); ++k) dir.col(static_cast<Eigen::Index>(k)) = bump(src.fine[k]);
  const ProblemSpec s0 = base.with_path(src.lift(base.grid, base.gamma));
  const Equilibrium e0 = solve_fbrde(s0);
  std::vector<ModulusRow> rows(ladder.size());
  detail::parallel_for(ladder.size(), worker_count(threads), [&](std::size_t i) {
    const ProblemSpec s = base.with_path(src.plus(ladder[i], dir).lift(base.grid, base.gamma));
    const Equilibrium e = solve_fbrde(s);
    rows[i].eps = ladder[i];
    rows[i].rho = rough_metric(*s0.eta, *s.eta);
    rows[i].distance = sup_distance(e0.m, e.m) + detail::feedback_distance(e0.feedback, e.feedback);
  });
  return rows;
}

/// Log-log slope of distance against eps over the nonzero rungs.
inline double modulus_slope(const std::vector<ModulusRow>& rows) {
  std::vector<double> x, y;
  for (const auto& r : rows)
    if (r.eps > 0.0 && r.distance > 0.0) {
      x.push_back(r.eps);
      y.push_back(r.distance);
    }
  return loglog_slope(x, y);
}

}  // namespace rmfg
