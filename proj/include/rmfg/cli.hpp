#pragma once

// Command-line front end. Needs OpenSSL (libcrypto) for the config digest.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "rmfg/io.hpp"
#include "rmfg/selftest.hpp"

namespace rmfg {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitNumerical = 3 };

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

struct CliOptions {
  std::string command;
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths, grid, refine;
  std::string format = "csv";
};

/// Records what produced an output directory. Contains nothing that varies
/// between identical reruns (no clocks, hosts or thread counts).
class Manifest {
 public:
  Manifest(const CliOptions& o, const std::string& config_bytes) {
    doc_["command"] = o.command;
    doc_["config"] = o.config;
    doc_["config_sha256"] = config_bytes.empty() ? "" : sha256_hex(config_bytes);
    doc_["out"] = o.out;
    doc_["tool_version"] = kToolVersion;
    doc_["outputs"] = Json::array();
  }
  void set(const std::string& key, const Json& v) { doc_[key] = v; }
  std::string reference() const {
    return "manifest.json config_sha256=" + doc_["config_sha256"].get<std::string>();
  }
  std::filesystem::path output(const std::filesystem::path& dir, const std::string& name) {
    doc_["outputs"].push_back(name);
    return dir / name;
  }
  void write(const std::filesystem::path& dir) const {
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    if (!f) throw ConfigError("cannot write manifest in " + dir.string());
    f << doc_.dump(2) << "\n";
  }

 private:
  Json doc_;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline PerturbationPlan stability_plan(const RunConfig& rc, const ProblemSpec& base) {
  const StabilitySettings& st = rc.stability;
  const PathSamples src = config_samples(rc, base.grid, base.p);
  PerturbationPlan plan;
  plan.base = base.with_path(src.lift(base.grid, base.gamma));
  plan.bound = st.bound;
  plan.pairs.push_back({plan.base, plan.base});
  for (std::size_t i = 0; i < st.pairs; ++i) {
    const double f = st.pairs > 1 ? static_cast<double>(i) / static_cast<double>(st.pairs - 1) : 0.0;
    const double eps = st.eps_min * std::pow(st.eps_max / st.eps_min, f);
    const Mat dir = brownian_samples(st.direction_seed + i, base.p, base.grid, src.refine);
    plan.pairs.push_back(path_pair(plan.base, src, dir, eps));
  }
  return plan;
}

inline Vec bump_direction(double t, double T, std::size_t p) {
  return Vec::Constant(static_cast<Eigen::Index>(p), std::sin(3.14159265358979323846 * t / T));
}

}  // namespace detail

/// Runs one subcommand; all diagnostics go to `err`, summaries to `out`.
inline int run_command(const CliOptions& o, std::ostream& out, std::ostream& err) {
  if (o.format != "csv") throw ConfigError("--format: only csv is supported");
  if (o.command == "selftest") {
    int failed = 0;
    for (const auto& c : run_selftest()) {
      out << (c.ok ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
      failed += c.ok ? 0 : 1;
    }
    out << (failed == 0 ? "selftest passed" : "selftest failed") << "\n";
    return failed == 0 ? kExitOk : kExitCheckFailed;
  }
  if (o.config.empty()) throw ConfigError("--config is required for " + o.command);
  const std::string bytes = detail::read_file(o.config);
  Json doc;
  try {
    doc = Json::parse(bytes);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + o.config + ": " + e.what());
  }
  RunConfig rc = parse_config(doc, std::filesystem::path(o.config).parent_path());
  if (o.grid) rc.steps = *o.grid;
  if (o.refine) rc.path.refine = *o.refine;
  if (o.paths) rc.sim.n_paths = *o.paths;
  if (o.seed) {
    if (o.command == "lift") rc.path.seed = *o.seed;
    else if (o.command == "randomize") rc.randomize.outer_seed = *o.seed;
    else rc.sim.seed = *o.seed;
  }
  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  Manifest man(o, bytes);
  man.set("grid", rc.steps);
  man.set("refine", rc.path.refine);
  man.set("paths", rc.sim.n_paths);
  man.set("seed", o.command == "lift" ? rc.path.seed : o.command == "randomize" ? rc.randomize.outer_seed : rc.sim.seed);
  const std::string ref = man.reference();
  int code = kExitOk;

  if (o.command == "lift") {
    const TimeGrid g = config_grid(rc);
    const std::size_t p = detail::get_or<std::size_t>(rc.doc["dims"], "p", 1, "dims");
    const double gamma = rc.doc.contains("regularity") ? rc.doc["regularity"].value("gamma", 0.4) : 0.4;
    const RoughPathPtr rp = config_path(rc, g, p, gamma);
    write_lift(man.output(dir, "lift.csv"), *rp, ref);
    out << "chen residual bound " << fmt(chen_residual_bound(*rp) / chen_scale(*rp)) << ", geometric residual "
        << fmt(geometric_residual(*rp)) << "\n";
  } else {
    const ProblemSpec s = build_problem(rc);
    if (o.command == "riccati") {
      const Equilibrium eq = solve_fbrde(s);
      write_riccati(man.output(dir, "riccati.csv"), s, eq, ref);
    } else if (o.command == "equilibrium") {
      const Equilibrium eq = solve_fbrde(s);
      write_equilibrium(man.output(dir, "equilibrium.csv"), s, eq, ref);
      const FbrdeResidual r = fbrde_residual(eq, s);
      CsvWriter w(man.output(dir, "equilibrium_summary.csv"),
                  {"fbrde_forward", "fbrde_backward", "s4r_violation", "J_formula"}, ref);
      w.row({r.forward, r.backward, eq.e.violation, value_formula(s, eq)});
    } else if (o.command == "simulate") {
      const Equilibrium eq = solve_fbrde(s);
      const SimResult r = simulate(s, eq, rc.sim);
      write_simulation(man.output(dir, "simulation.csv"), s, r, ref);
      write_cost_summary(man.output(dir, "cost.csv"), r, ref);
      double dev = 0.0;
      for (std::size_t k = 0; k < s.grid.size(); ++k) dev = std::max(dev, (r.mean[k] - eq.m[k]).cwiseAbs().maxCoeff());
      out << "max |mean - m| " << fmt(dev) << ", max stderr " << fmt(r.max_stderr()) << ", J " << fmt(r.J) << " +- "
          << fmt(r.J_stderr) << "\n";
    } else if (o.command == "gap") {
      if (rc.gap.empty()) throw ConfigError("gap: the config lists no perturbations");
      const Equilibrium eq = solve_fbrde(s);
      CsvWriter w(man.output(dir, "gap.csv"), {"id", "profile", "gap", "stderr", "bound", "half_bound", "holds"}, ref);
      for (std::size_t i = 0; i < rc.gap.size(); ++i) {
        const GapResult g = optimality_gap(s, eq, perturbation_nodes(rc.gap[i], s.grid), rc.sim);
        const bool holds = g.gap >= g.bound - 4.0 * g.gap_stderr - 1e-3;
        w.row_strings({std::to_string(i), rc.gap[i].profile, fmt(g.gap), fmt(g.gap_stderr), fmt(g.bound),
                       fmt(g.half_bound), holds ? "1" : "0"});
        if (!holds) {
          err << "optimality-violation: perturbation " << i << " gap " << fmt(g.gap) << " below lambda |h|^2 = "
              << fmt(g.bound) << "\n";
          code = kExitCheckFailed;
        }
      }
    } else if (o.command == "stability") {
      const PerturbationPlan plan = detail::stability_plan(rc, s);
      SimConfig cfg = rc.sim;
      cfg.n_paths = rc.stability.paths;
      const StabilityReport rep = run_stability(plan, cfg);
      write_stability(man.output(dir, "stability.csv"), rep, ref);
      std::vector<double> ladder = {0.0};
      ladder.insert(ladder.end(), rc.stability.ladder.begin(), rc.stability.ladder.end());
      const PathSamples src = config_samples(rc, s.grid, s.p);
      const double T = s.grid.horizon();
      const auto rows = lyons_map_modulus(plan.base, src, [&](double t) { return detail::bump_direction(t, T, s.p); }, ladder);
      write_modulus(man.output(dir, "modulus.csv"), rows, ref);
      out << "max ratio " << fmt(rep.max_ratio) << ", median ratio " << fmt(rep.median_ratio) << ", modulus slope "
          << fmt(modulus_slope(rows)) << "\n";
    } else if (o.command == "randomize") {
      if (rc.path.kind != "brownian") throw ConfigError("randomize: path.source must be brownian");
      RandomizeConfig cfg;
      cfg.n_outer = rc.randomize.outer;
      cfg.outer_seed = rc.randomize.outer_seed;
      cfg.refine = rc.path.refine;
      cfg.inner = rc.sim;
      cfg.inner.n_paths = o.paths ? *o.paths : rc.randomize.inner_paths;
      const auto res = randomize(s, cfg);
      std::vector<std::string> h = {"outer", "lift_seed", "inner_seed"};
      detail::append_numbered(h, "m_T", s.d);
      for (const char* c : {"J_formula", "J_hat", "J_stderr", "mean_gap", "max_stderr", "mean_ok", "value_ok"}) h.push_back(c);
      CsvWriter w(man.output(dir, "randomize.csv"), h, ref);
      for (std::size_t i = 0; i < res.size(); ++i) {
        const auto& r = res[i];
        std::vector<std::string> row = {std::to_string(i), std::to_string(r.lift_seed), std::to_string(r.inner_seed)};
        for (Eigen::Index j = 0; j < r.m.back().size(); ++j) row.push_back(fmt(r.m.back()(j)));
        for (double v : {r.J_formula, r.sim.J, r.sim.J_stderr, r.mean_gap, r.sim.max_stderr()}) row.push_back(fmt(v));
        row.push_back(r.mean_ok ? "1" : "0");
        row.push_back(r.value_ok ? "1" : "0");
        w.row_strings(row);
      }
    } else {
      throw ConfigError("unknown command " + o.command);
    }
  }
  man.write(dir);
  return code;
}

/// argv entry point with the documented exit codes.
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Linear-quadratic mean-field games with rough common noise"};
  app.require_subcommand(1, 1);
  CliOptions o;
  std::uint64_t seed = 0;
  std::size_t paths = 0, grid = 0, refine = 0;
  for (const char* name : {"lift", "riccati", "equilibrium", "simulate", "gap", "stability", "randomize", "selftest"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", o.config, "JSON problem document (schema 1)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", seed, "Monte-Carlo seed (path seed for lift, outer seed for randomize)");
    sub->add_option("--paths", paths, "number of simulated paths")->check(CLI::PositiveNumber);
    sub->add_option("--grid", grid, "number of grid steps N")->check(CLI::PositiveNumber);
    sub->add_option("--refine", refine, "refinement factor of the path lift")->check(CLI::PositiveNumber);
    sub->add_option("--format", o.format, "output format (csv)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }
  CLI::App* sub = app.get_subcommands().front();
  o.command = sub->get_name();
  if (sub->count("--seed")) o.seed = seed;
  if (sub->count("--paths")) o.paths = paths;
  if (sub->count("--grid")) o.grid = grid;
  if (sub->count("--refine")) o.refine = refine;
  try {
    return run_command(o, out, err);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const AssumptionError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

}  // namespace rmfg
