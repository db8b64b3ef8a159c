#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rmfg/mfg_solver.hpp"
#include "rmfg/random.hpp"

namespace rmfg {

/// How the agent is steered in one arm of a simulation.
///  - Optimal: the equilibrium feedback.
///  - Zero: no control.
///  - OptimalPlus: the optimal control process plus a deterministic h_t; the
///    state then moves by the deterministic response H to h.
struct ControlArm {
  enum class Mode { Optimal, Zero, OptimalPlus };
  Mode mode = Mode::Optimal;
  std::vector<Vec> h;  // per node, kappa-vectors (OptimalPlus only)

  static ControlArm optimal() { return {}; }
  static ControlArm zero() { return {Mode::Zero, {}}; }
  static ControlArm optimal_plus(std::vector<Vec> h) { return {Mode::OptimalPlus, std::move(h)}; }
};

struct SimConfig {
  std::size_t n_paths = 1000;
  std::uint64_t seed = 1;
  bool antithetic = false;
  ControlArm control;
  /// Brownian increments per grid step; grids N and N*s/s' share one path.
  std::size_t noise_substeps = 1;
  /// Number of leading paths whose node values are kept in the result.
  std::size_t keep_paths = 0;
  /// Worker count; 0 reads RMFG_THREADS and falls back to the hardware.
  unsigned threads = 0;
};

struct SimResult {
  std::vector<Vec> mean, stderr_;
  std::vector<Mat> cov;
  double J = 0.0, J_stderr = 0.0;
  /// Paired difference J(arm) - J(first arm) with its standard error.
  double dJ = 0.0, dJ_stderr = 0.0;
  std::size_t n_paths = 0, n_units = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<Vec>> paths;

  double max_stderr() const {
    double s = 0.0;
    for (const auto& v : stderr_) s = std::max(s, v.maxCoeff());
    return s;
  }
};

inline unsigned worker_count(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RMFG_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

namespace detail {

/// Exact-per-step affine propagator of x' = L(theta) x + c(theta) over one
/// step, computed by RK4 on the augmented (d+1) x (d+1) system.
template <class LFn, class CFn>
void affine_propagator(double h, LFn&& L, CFn&& c, Mat& Phi, Vec& phi) {
  const Eigen::Index d = L(0.0).rows();
  const auto aug = [&](double th) {
    Mat a = Mat::Zero(d + 1, d + 1);
    a.topLeftCorner(d, d) = L(th);
    a.topRightCorner(d, 1) = c(th);
    return a;
  };
  const Mat I = Mat::Identity(d + 1, d + 1);
  const Mat a0 = aug(0.0), am = aug(0.5), a1 = aug(1.0);
  const Mat k1 = a0;
  const Mat k2 = am * (I + 0.5 * h * k1);
  const Mat k3 = am * (I + 0.5 * h * k2);
  const Mat k4 = a1 * (I + h * k3);
  const Mat Y = I + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  Phi = Y.topLeftCorner(d, d);
  phi = Y.topRightCorner(d, 1);
}

/// Symmetric square root of a PSD matrix.
inline Mat psd_sqrt(const Mat& c) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (c + c.transpose()));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

/// Per-step data of the transformed state hatX = K(0,t)(X - M) under one
/// closed loop: hatX_{k+1} = Phi_k hatX_k + phi_k + Psi_k dW_k with
/// Psi_k = Phi_k K(0,t_k) Sigma_k.
struct StepTable {
  std::vector<Mat> Phi, Psi;
  std::vector<Vec> phi;
};

inline StepTable build_table(const ProblemSpec& s, const Equilibrium& eq, bool controlled) {
  const std::size_t n = s.grid.size();
  StepTable t;
  t.Phi.resize(n - 1);
  t.Psi.resize(n - 1);
  t.phi.resize(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const auto L = [&](double th) -> Mat {
      Mat l = eq.dec.hatA.at(k, th);
      if (controlled) l -= eq.dec.frakB.at(k, th) * eq.dec.P.at(k, th);
      return l;
    };
    const auto c = [&](double th) -> Vec {
      Vec v = eq.aff.Dhat.at(k, th).col(0);
      if (controlled) v -= eq.dec.frakB.at(k, th) * eq.aff.Pi.at(k, th).col(0);
      return v;
    };
    affine_propagator(s.grid.dt(k), L, c, t.Phi[k], t.phi[k]);
    t.Psi[k] = t.Phi[k] * eq.K.inverse[k] * s.drift.Sigma[k];
  }
  return t;
}

/// Deterministic response H = K(t,0) hatH of the state to a control shift h.
inline std::vector<Vec> control_response(const ProblemSpec& s, const Equilibrium& eq, const std::vector<Vec>& h) {
  const std::size_t n = s.grid.size();
  if (h.size() != n) throw ConfigError("perturbation h needs one kappa-vector per node");
  std::vector<Vec> H(n);
  Vec x = Vec::Zero(static_cast<Eigen::Index>(s.d));
  H[0] = x;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    Mat Phi;
    Vec phi;
    affine_propagator(
        s.grid.dt(k), [&](double th) { return eq.dec.hatA.at(k, th); },
        [&](double th) { return Vec(eq.dec.hatB.at(k, th) * h[k]); }, Phi, phi);
    x = Phi * x + phi;
    H[k + 1] = eq.K.forward[k + 1] * x;
  }
  return H;
}

/// Running cost l_k(x, a) at node k against the mean flow m.
inline double running_cost(const ProblemSpec& s, std::size_t k, const Vec& m, const Vec& x, const Vec& a) {
  const Vec dev = x - s.cost.S[k] * m;
  return 0.5 * (x.dot(s.cost.Q[k] * x) + a.dot(s.cost.R[k] * a) + dev.dot(s.cost.Qbar[k] * dev));
}

inline double terminal_cost(const ProblemSpec& s, const Vec& m, const Vec& x) {
  const Vec dev = x - s.cost.S_T * m;
  return 0.5 * (x.dot(s.cost.Q_T * x) + dev.dot(s.cost.Qbar_T * dev));
}

/// Pairwise sum of per-block vectors in block order.
inline std::vector<double> pairwise_sum(const std::vector<std::vector<double>>& blocks, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return blocks[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> a = pairwise_sum(blocks, lo, mid);
  const std::vector<double> b = pairwise_sum(blocks, mid, hi);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

/// Draw layout of one path: xi uses indices [0, d), the step-k substep-u
/// increment component j uses d + (k s + u) q + j.
struct DrawLayout {
  std::size_t d, q, s;
  std::uint64_t step(std::size_t k, std::size_t u, std::size_t j) const { return d + (k * s + u) * q + j; }
};

}  // namespace detail

/// Simulation of one or more control arms on common random numbers. Each path
/// draws from its own counter-based substream, blocks of 256 sampling units
/// are summed sequentially and the block sums are reduced pairwise in block
/// order, so results do not depend on the worker count.
inline std::vector<SimResult> simulate_arms(const ProblemSpec& s, const Equilibrium& eq, const SimConfig& cfg,
                                            const std::vector<ControlArm>& arms) {
  if (cfg.n_paths == 0) throw ConfigError("simulation needs at least one path");
  if (cfg.antithetic && cfg.n_paths % 2 != 0) throw ConfigError("antithetic sampling needs an even path count");
  if (cfg.noise_substeps == 0) throw ConfigError("noise substeps must be positive");
  if (arms.empty()) throw ConfigError("no control arm given");
  const std::size_t n = s.grid.size(), d = s.d, q = s.q, A = arms.size();
  const auto D = static_cast<Eigen::Index>(d);

  bool need_opt = false, need_zero = false;
  for (const auto& a : arms) (a.mode == ControlArm::Mode::Zero ? need_zero : need_opt) = true;
  detail::StepTable opt, zero;
  if (need_opt) opt = detail::build_table(s, eq, true);
  if (need_zero) zero = detail::build_table(s, eq, false);
  std::vector<std::vector<Vec>> H(A);
  for (std::size_t a = 0; a < A; ++a)
    if (arms[a].mode == ControlArm::Mode::OptimalPlus) H[a] = detail::control_response(s, eq, arms[a].h);
  const Mat xi_root = s.point_mass() ? Mat::Zero(D, D) : detail::psd_sqrt(s.cov0);
  const detail::DrawLayout layout{d, q, cfg.noise_substeps};
  const std::size_t kap = s.kappa;

  // Flat row-major copies of everything the inner loop touches.
  const auto flat = [](const std::vector<Mat>& v, std::size_t r, std::size_t c) {
    std::vector<double> out(v.size() * r * c);
    for (std::size_t k = 0; k < v.size(); ++k)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          out[(k * r + i) * c + j] = v[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return out;
  };
  const auto flat_vec = [&](const std::vector<Vec>& v) {
    std::vector<Mat> m(v.begin(), v.end());
    return flat(m, static_cast<std::size_t>(v.empty() ? 0 : v[0].size()), 1);
  };
  const std::vector<double> Pho = flat(opt.Phi, d, d), pho = flat_vec(opt.phi), Pso = flat(opt.Psi, d, q);
  const std::vector<double> Phz = flat(zero.Phi, d, d), phz = flat_vec(zero.phi), Psz = flat(zero.Psi, d, q);
  const std::vector<double> Fw = flat(eq.K.forward, d, d), Mf = flat_vec(eq.aff.M), mf = flat_vec(eq.m);
  const std::vector<double> gain = flat(eq.feedback.gain, kap, d), off = flat_vec(eq.feedback.offset);
  const std::vector<double> Qf = flat(s.cost.Q, d, d), Rf = flat(s.cost.R, kap, kap), Qbf = flat(s.cost.Qbar, d, d);
  std::vector<Vec> sm_v(n);
  for (std::size_t k = 0; k < n; ++k) sm_v[k] = s.cost.S[k] * eq.m[k];
  const std::vector<double> Smf = flat_vec(sm_v);
  const Vec smT = s.cost.S_T * eq.m[n - 1];
  std::vector<std::vector<double>> Hf(A), hf(A);
  for (std::size_t a = 0; a < A; ++a)
    if (arms[a].mode == ControlArm::Mode::OptimalPlus) {
      Hf[a] = flat_vec(H[a]);
      hf[a] = flat_vec(arms[a].h);
    }
  std::vector<double> wts(n, 0.0);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    wts[k] += 0.5 * s.grid.dt(k);
    wts[k + 1] += 0.5 * s.grid.dt(k);
  }
  std::vector<double> sd(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) sd[k] = std::sqrt(s.grid.dt(k) / static_cast<double>(cfg.noise_substeps));

  const std::size_t per_unit = cfg.antithetic ? 2 : 1;
  const std::size_t n_units = cfg.n_paths / per_unit;
  constexpr std::size_t kBlock = 256;
  const std::size_t n_blocks = (n_units + kBlock - 1) / kBlock;
  // per arm and node: unit sum (d), unit square diag (d), path outer (d*d); then J, J^2, dJ, dJ^2
  const std::size_t node_stride = 2 * d + d * d;
  const std::size_t arm_stride = n * node_stride + 4;
  std::vector<std::vector<double>> block_sums(n_blocks);
  std::vector<std::vector<Vec>> kept(std::min(cfg.keep_paths, cfg.n_paths));

  const auto quad = [](const double* M, const double* x, std::size_t r) {
    double out = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < r; ++j) row += M[i * r + j] * x[j];
      out += x[i] * row;
    }
    return out;
  };

  // Per-thread scratch for one path.
  struct Scratch {
    std::vector<double> xo, xz, z, dw, xh, tmp, xs, al, dev;
  };
  const auto make_scratch = [&] {
    Scratch w;
    w.xo.assign(need_opt ? n * d : 0, 0.0);
    w.xz.assign(need_zero ? n * d : 0, 0.0);
    w.z.assign((n - 1) * cfg.noise_substeps * q, 0.0);
    w.dw.assign(q, 0.0);
    w.xh.assign(d, 0.0);
    w.tmp.assign(d, 0.0);
    w.xs.assign(d, 0.0);
    w.al.assign(kap, 0.0);
    w.dev.assign(d, 0.0);
    return w;
  };

  // Propagates hatX with the given tables and stores X = F hatX + M per node.
  const auto propagate = [&](const double* xi, const double* Ph, const double* ph, const double* Ps,
                             const std::vector<std::vector<double>>& dws, double* traj, Scratch& w) {
    std::copy(xi, xi + d, w.xh.begin());
    for (std::size_t k = 0;; ++k) {
      const double* F = Fw.data() + k * d * d;
      for (std::size_t i = 0; i < d; ++i) {
        double v = Mf[k * d + i];
        for (std::size_t j = 0; j < d; ++j) v += F[i * d + j] * w.xh[j];
        traj[k * d + i] = v;
      }
      if (k + 1 == n) break;
      const double* P = Ph + k * d * d;
      const double* S = Ps + k * d * q;
      const double* dw = dws[k].data();
      for (std::size_t i = 0; i < d; ++i) {
        double v = ph[k * d + i];
        for (std::size_t j = 0; j < d; ++j) v += P[i * d + j] * w.xh[j];
        for (std::size_t j = 0; j < q; ++j) v += S[i * q + j] * dw[j];
        w.tmp[i] = v;
      }
      std::swap(w.xh, w.tmp);
    }
  };

  // State of arm a at node k into w.xs; control into w.al.
  const auto arm_state = [&](std::size_t a, std::size_t k, const Scratch& w, double* xs, double* al) {
    const ControlArm::Mode mode = arms[a].mode;
    if (mode == ControlArm::Mode::Zero) {
      std::copy(w.xz.begin() + static_cast<std::ptrdiff_t>(k * d), w.xz.begin() + static_cast<std::ptrdiff_t>((k + 1) * d), xs);
      std::fill(al, al + kap, 0.0);
      return;
    }
    const double* xo = w.xo.data() + k * d;
    const double* G = gain.data() + k * kap * d;
    for (std::size_t i = 0; i < kap; ++i) {
      double v = off[k * kap + i];
      for (std::size_t j = 0; j < d; ++j) v += G[i * d + j] * xo[j];
      al[i] = v;
    }
    std::copy(xo, xo + d, xs);
    if (mode == ControlArm::Mode::OptimalPlus) {
      for (std::size_t i = 0; i < kap; ++i) al[i] += hf[a][k * kap + i];
      for (std::size_t i = 0; i < d; ++i) xs[i] += Hf[a][k * d + i];
    }
  };

  // One path: fills the trajectories in w and cost[arm].
  std::vector<std::vector<double>> dws_proto(n - 1, std::vector<double>(q, 0.0));
  const auto run_path = [&](std::size_t path, Scratch& w, std::vector<std::vector<double>>& dws, double* cost) {
    const std::size_t unit = path / per_unit;
    const double sign = (cfg.antithetic && path % 2 == 1) ? -1.0 : 1.0;
    const RandomStream rng(cfg.seed, unit);
    Vec zi(D);
    for (std::size_t j = 0; j < d; ++j) zi(static_cast<Eigen::Index>(j)) = sign * rng.normal(j);
    const Vec xi = s.mean0 + xi_root * zi;
    // hatX_0 = K(0,0)(xi - M_0) with K(0,0) = Id and M_0 = 0
    rng.normals(layout.step(0, 0, 0), w.z.size(), w.z.begin());
    for (std::size_t k = 0; k + 1 < n; ++k) {
      std::fill(dws[k].begin(), dws[k].end(), 0.0);
      for (std::size_t u = 0; u < cfg.noise_substeps; ++u) {
        const double* z = w.z.data() + (layout.step(k, u, 0) - layout.step(0, 0, 0));
        for (std::size_t j = 0; j < q; ++j) dws[k][j] += sign * sd[k] * z[j];
      }
    }
    if (need_opt) propagate(xi.data(), Pho.data(), pho.data(), Pso.data(), dws, w.xo.data(), w);
    if (need_zero) propagate(xi.data(), Phz.data(), phz.data(), Psz.data(), dws, w.xz.data(), w);
    for (std::size_t a = 0; a < A; ++a) {
      double c = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        arm_state(a, k, w, w.xs.data(), w.al.data());
        for (std::size_t i = 0; i < d; ++i) w.dev[i] = w.xs[i] - Smf[k * d + i];
        const double l = 0.5 * (quad(Qf.data() + k * d * d, w.xs.data(), d) + quad(Rf.data() + k * kap * kap, w.al.data(), kap) +
                                quad(Qbf.data() + k * d * d, w.dev.data(), d));
        c += wts[k] * l;
      }
      const Vec xT = Eigen::Map<const Vec>(w.xs.data(), D);
      const Vec devT = xT - smT;
      cost[a] = c + 0.5 * (xT.dot(s.cost.Q_T * xT) + devT.dot(s.cost.Qbar_T * devT));
    }
  };

  const auto run_block = [&](std::size_t b) {
    std::vector<double> acc(A * arm_stride, 0.0);
    Scratch w1 = make_scratch(), w2 = make_scratch();
    std::vector<std::vector<double>> dws = dws_proto;
    std::vector<double> cost(A), cost2(A), x1(d), x2(d), al(kap);
    const std::size_t u0 = b * kBlock, u1 = std::min(n_units, u0 + kBlock);
    const auto keep = [&](std::size_t path, const Scratch& w) {
      if (path >= kept.size()) return;
      kept[path].resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        arm_state(0, k, w, x1.data(), al.data());
        kept[path][k] = Eigen::Map<const Vec>(x1.data(), D);
      }
    };
    for (std::size_t unit = u0; unit < u1; ++unit) {
      const std::size_t p0 = unit * per_unit;
      run_path(p0, w1, dws, cost.data());
      keep(p0, w1);
      if (per_unit == 2) {
        run_path(p0 + 1, w2, dws, cost2.data());
        keep(p0 + 1, w2);
      }
      for (std::size_t a = 0; a < A; ++a) {
        double* base = acc.data() + a * arm_stride;
        for (std::size_t k = 0; k < n; ++k) {
          double* nd = base + k * node_stride;
          const double* mk = mf.data() + k * d;
          arm_state(a, k, w1, x1.data(), al.data());
          for (std::size_t i = 0; i < d; ++i) x1[i] -= mk[i];
          for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) nd[2 * d + i * d + j] += x1[i] * x1[j];
          if (per_unit == 2) {
            arm_state(a, k, w2, x2.data(), al.data());
            for (std::size_t i = 0; i < d; ++i) x2[i] -= mk[i];
            for (std::size_t i = 0; i < d; ++i)
              for (std::size_t j = 0; j < d; ++j) nd[2 * d + i * d + j] += x2[i] * x2[j];
            for (std::size_t i = 0; i < d; ++i) x1[i] = 0.5 * (x1[i] + x2[i]);
          }
          for (std::size_t i = 0; i < d; ++i) {
            nd[i] += x1[i];
            nd[d + i] += x1[i] * x1[i];
          }
        }
        const double cu = per_unit == 2 ? 0.5 * (cost[a] + cost2[a]) : cost[a];
        const double c0 = per_unit == 2 ? 0.5 * (cost[0] + cost2[0]) : cost[0];
        double* tail = base + n * node_stride;
        tail[0] += cu;
        tail[1] += cu * cu;
        tail[2] += cu - c0;
        tail[3] += (cu - c0) * (cu - c0);
      }
    }
    block_sums[b] = std::move(acc);
  };

  const unsigned workers = std::min<unsigned>(worker_count(cfg.threads), static_cast<unsigned>(std::max<std::size_t>(n_blocks, 1)));
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) run_block(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t b = next.fetch_add(1); b < n_blocks; b = next.fetch_add(1)) run_block(b);
      });
    for (auto& t : pool) t.join();
  }
  const std::vector<double> tot = detail::pairwise_sum(block_sums, 0, n_blocks);

  std::vector<SimResult> out(A);
  const double nu = static_cast<double>(n_units), np = static_cast<double>(cfg.n_paths);
  const double bessel_u = nu > 1 ? nu / (nu - 1.0) : 0.0, bessel_p = np > 1 ? np / (np - 1.0) : 0.0;
  for (std::size_t a = 0; a < A; ++a) {
    SimResult& r = out[a];
    r.n_paths = cfg.n_paths;
    r.n_units = n_units;
    r.seed = cfg.seed;
    r.mean.resize(n);
    r.stderr_.resize(n);
    r.cov.resize(n);
    const double* base = tot.data() + a * arm_stride;
    for (std::size_t k = 0; k < n; ++k) {
      const double* nd = base + k * node_stride;
      Vec mu(D), se(D);
      Mat c(D, D);
      for (std::size_t i = 0; i < d; ++i) {
        const double m1 = nd[i] / nu;
        mu(static_cast<Eigen::Index>(i)) = m1;
        const double var = std::max(0.0, (nd[d + i] / nu - m1 * m1) * bessel_u);
        se(static_cast<Eigen::Index>(i)) = std::sqrt(var / nu);
      }
      // path-level mean of the deviation equals the unit-level one
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              (nd[2 * d + i * d + j] / np - mu(static_cast<Eigen::Index>(i)) * mu(static_cast<Eigen::Index>(j))) * bessel_p;
      r.mean[k] = eq.m[k] + mu;
      r.stderr_[k] = se;
      r.cov[k] = c;
    }
    const double* tail = base + n * node_stride;
    r.J = tail[0] / nu;
    r.J_stderr = std::sqrt(std::max(0.0, (tail[1] / nu - r.J * r.J) * bessel_u) / nu);
    r.dJ = tail[2] / nu;
    r.dJ_stderr = std::sqrt(std::max(0.0, (tail[3] / nu - r.dJ * r.dJ) * bessel_u) / nu);
  }
  out[0].paths = std::move(kept);
  return out;
}

inline SimResult simulate(const ProblemSpec& s, const Equilibrium& eq, const SimConfig& cfg) {
  return simulate_arms(s, eq, cfg, {cfg.control}).front();
}

struct CostEstimate {
  double J = 0.0, stderr_ = 0.0;
};

/// Monte-Carlo cost of the configured control (trapezoid rule in time).
inline CostEstimate estimate_cost(const ProblemSpec& s, const Equilibrium& eq, const SimConfig& cfg) {
  const SimResult r = simulate(s, eq, cfg);
  return {r.J, r.J_stderr};
}

/// Exact expectation of the simulated cost for the optimal feedback, from
/// the Gaussian mean and covariance recursions of the same discrete scheme.
inline double value_formula(const ProblemSpec& s, const Equilibrium& eq) {
  const std::size_t n = s.grid.size();
  const detail::StepTable t = detail::build_table(s, eq, true);
  Vec mu = s.mean0;
  Mat cv = s.point_mass() ? Mat::Zero(mu.size(), mu.size()) : s.cov0;
  double J = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Mat& F = eq.K.forward[k];
    const Vec mx = F * mu + eq.aff.M[k];
    const Mat cx = F * cv * F.transpose();
    const Vec ma = eq.feedback(k, mx);
    const Mat& Gk = eq.feedback.gain[k];
    const Vec dev = mx - s.cost.S[k] * eq.m[k];
    const Mat ww = s.cost.Q[k] + s.cost.Qbar[k];
    double l = 0.5 * ((ww * cx).trace() + mx.dot(s.cost.Q[k] * mx) + dev.dot(s.cost.Qbar[k] * dev) +
                      (s.cost.R[k] * Gk * cx * Gk.transpose()).trace() + ma.dot(s.cost.R[k] * ma));
    if (k > 0) J += 0.5 * s.grid.dt(k - 1) * (prev + l);
    prev = l;
    if (k + 1 == n) {
      const Vec devT = mx - s.cost.S_T * eq.m[k];
      J += 0.5 * (((s.cost.Q_T + s.cost.Qbar_T) * cx).trace() + mx.dot(s.cost.Q_T * mx) + devT.dot(s.cost.Qbar_T * devT));
      break;
    }
    mu = t.Phi[k] * mu + t.phi[k];
    cv = t.Phi[k] * cv * t.Phi[k].transpose() + s.grid.dt(k) * t.Psi[k] * t.Psi[k].transpose();
  }
  return J;
}

/// Squared norm of a deterministic control shift, trapezoid in time.
inline double h_norm2(const TimeGrid& g, const std::vector<Vec>& h) {
  double out = 0.0;
  for (std::size_t k = 0; k + 1 < g.size(); ++k) out += 0.5 * g.dt(k) * (h[k].squaredNorm() + h[k + 1].squaredNorm());
  return out;
}

struct GapResult {
  double gap = 0.0, gap_stderr = 0.0;
  double bound = 0.0;       // lambda |h|^2
  double half_bound = 0.0;  // lambda |h|^2 / 2
};

/// Paired estimate of J(alpha* + h) - J(alpha*) on common random numbers.
inline GapResult optimality_gap(const ProblemSpec& s, const Equilibrium& eq, const std::vector<Vec>& h, SimConfig cfg) {
  const auto r = simulate_arms(s, eq, cfg, {ControlArm::optimal(), ControlArm::optimal_plus(h)});
  GapResult g;
  g.gap = r[1].dJ;
  g.gap_stderr = r[1].dJ_stderr;
  g.bound = s.cost.lambda * h_norm2(s.grid, h);
  g.half_bound = 0.5 * g.bound;
  return g;
}

/// Direct scheme for the state equation with the equilibrium feedback:
/// Heun for the drift, a Davie step for the affine rough part, Euler for the
/// Brownian part. Uses the same draws as the simulation for path index `path`.
inline std::vector<Vec> intrinsic_path(const ProblemSpec& s, const Equilibrium& eq, const SimConfig& cfg,
                                       std::size_t path) {
  const std::size_t n = s.grid.size(), d = s.d, q = s.q, p = s.p;
  const auto D = static_cast<Eigen::Index>(d);
  const std::size_t per_unit = cfg.antithetic ? 2 : 1;
  const double sign = (cfg.antithetic && path % 2 == 1) ? -1.0 : 1.0;
  const RandomStream rng(cfg.seed, path / per_unit);
  const detail::DrawLayout layout{d, q, cfg.noise_substeps};
  const Mat xi_root = s.point_mass() ? Mat::Zero(D, D) : detail::psd_sqrt(s.cov0);
  Vec zi(D);
  for (std::size_t j = 0; j < d; ++j) zi(static_cast<Eigen::Index>(j)) = sign * rng.normal(j);
  std::vector<Vec> x(n);
  x[0] = s.mean0 + xi_root * zi;
  const auto f = [&](std::size_t k, std::size_t node, const Vec& v) -> Vec {
    return s.drift.A[k] * v + s.drift.B[k] * eq.feedback(node, v) + s.drift.C[k] * eq.m[node];
  };
  std::vector<double> z(q);
  const RoughPath& rp = *s.eta;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double h = s.grid.dt(k);
    const double sd = std::sqrt(h / static_cast<double>(cfg.noise_substeps));
    Vec dw = Vec::Zero(static_cast<Eigen::Index>(q));
    for (std::size_t u = 0; u < cfg.noise_substeps; ++u) {
      rng.normals(layout.step(k, u, 0), q, z.begin());
      for (std::size_t j = 0; j < q; ++j) dw(static_cast<Eigen::Index>(j)) += sign * sd * z[j];
    }
    const Vec de = rp.step_increment(k);
    const Mat& a2 = rp.step_area(k);
    const Vec& xk = x[k];
    const Vec& mk = eq.m[k];
    Vec rough = Vec::Zero(D);
    for (std::size_t j = 0; j < p; ++j) {
      const auto J = static_cast<Eigen::Index>(j);
      rough += (s.A1.value(k, j) * xk + s.C1.value(k, j) * mk) * de(J);
      for (std::size_t i = 0; i < p; ++i) {
        const auto I = static_cast<Eigen::Index>(i);
        if (a2(I, J) == 0.0) continue;
        const Vec xi_d = s.A1.value(k, i) * xk + s.C1.value(k, i) * mk;  // X'_i
        const Vec mi_d = (s.A1.value(k, i) + s.C1.value(k, i)) * mk;      // m'_i
        rough += (s.A1.deriv(k, j, i) * xk + s.A1.value(k, j) * xi_d + s.C1.deriv(k, j, i) * mk +
                  s.C1.value(k, j) * mi_d) *
                 a2(I, J);
      }
    }
    const Vec noise = s.drift.Sigma[k] * dw;
    const Vec f0 = f(k, k, xk);
    const Vec pred = xk + h * f0 + rough + noise;
    x[k + 1] = xk + 0.5 * h * (f0 + f(k, k + 1, pred)) + rough + noise;
  }
  return x;
}

struct RandomizeConfig {
  std::size_t n_outer = 16;
  std::uint64_t outer_seed = 1;
  std::size_t refine = 16;  // Brownian lift refinement
  SimConfig inner;          // inner.seed is mixed per outer sample
};

struct OuterSample {
  std::uint64_t lift_seed = 0, inner_seed = 0;
  std::vector<Vec> m;
  double J_formula = 0.0;
  SimResult sim;
  double mean_gap = 0.0;  // max_t |Xbar_t - m_t|
  bool mean_ok = false, value_ok = false;
};

/// Draws the common noise as a Stratonovich Brownian lift per outer seed,
/// solves the conditional game and simulates it with an inner stream that is
/// unrelated to the lift stream. Coefficients must not depend on the path.
inline std::vector<OuterSample> randomize(const ProblemSpec& tmpl, const RandomizeConfig& rc) {
  if (rc.n_outer == 0) throw ConfigError("randomize needs at least one outer seed");
  std::vector<OuterSample> out(rc.n_outer);
  for (std::size_t i = 0; i < rc.n_outer; ++i) {
    OuterSample& o = out[i];
    o.lift_seed = mix_seed(rc.outer_seed, i);
    o.inner_seed = mix_seed(rc.inner.seed ^ 0x5bd1e995ull, i);
    const auto eta = std::make_shared<const RoughPath>(
        brownian_stratonovich_lift(o.lift_seed, tmpl.p, tmpl.grid, rc.refine, tmpl.gamma));
    const ProblemSpec s = tmpl.with_path(eta);
    const Equilibrium eq = solve_fbrde(s);
    SimConfig cfg = rc.inner;
    cfg.seed = o.inner_seed;
    cfg.control = ControlArm::optimal();
    o.sim = simulate(s, eq, cfg);
    o.m = eq.m;
    o.J_formula = value_formula(s, eq);
    for (std::size_t k = 0; k < eq.m.size(); ++k)
      o.mean_gap = std::max(o.mean_gap, (o.sim.mean[k] - eq.m[k]).cwiseAbs().maxCoeff());
    o.mean_ok = o.mean_gap <= 4.0 * o.sim.max_stderr();
    o.value_ok = std::abs(o.sim.J - o.J_formula) <= 4.0 * o.sim.J_stderr;
  }
  return out;
}

}  // namespace rmfg
