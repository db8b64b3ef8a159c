#pragma once

// JSON problem documents (schema 1). See configs/README.md for the layout.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmfg/monte_carlo.hpp"
#include "rmfg/stability.hpp"

namespace rmfg {

using Json = nlohmann::json;

struct PathSource {
  std::string kind = "zero";  // zero | linear | brownian | canonical | file
  std::uint64_t seed = 1;
  std::size_t refine = 16;
  std::vector<double> slope;
  std::filesystem::path file;
};

struct GapPerturbation {
  Vec h;
  std::string profile = "constant";  // constant | ramp | sine
};

struct StabilitySettings {
  std::size_t pairs = 16;
  double eps_min = 2e-4, eps_max = 1.8e-2;
  std::uint64_t direction_seed = 1000;
  double bound = 10.0;
  std::size_t paths = 32;
  std::vector<double> ladder = {0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625};
};

struct RandomizeSettings {
  std::size_t outer = 16;
  std::uint64_t outer_seed = 1;
  std::size_t inner_paths = 10000;
};

/// A parsed document. The problem itself is built on demand so that grid and
/// refinement overrides apply before the driving path is constructed.
struct RunConfig {
  Json doc;
  std::filesystem::path base_dir;
  std::string name;
  double horizon = 1.0;
  std::size_t steps = 256;
  PathSource path;
  SimConfig sim;
  std::vector<GapPerturbation> gap;
  StabilitySettings stability;
  RandomizeSettings randomize;
};

namespace detail {

inline void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
}

template <class T>
T get_or(const Json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

/// Matrix from a number (c Id when square, constant fill otherwise), a flat
/// array (row or column vector) or an array of rows.
inline Mat matrix_value(const Json& v, Eigen::Index r, Eigen::Index c, const std::string& where) {
  if (v.is_number()) {
    const double x = v.get<double>();
    return r == c ? Mat(x * Mat::Identity(r, c)) : Mat(Mat::Constant(r, c, x));
  }
  if (!v.is_array()) throw ConfigError(where + ": expected a number or an array");
  if (!v.empty() && v[0].is_array()) {
    if (static_cast<Eigen::Index>(v.size()) != r) throw ConfigError(where + ": wrong number of rows");
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      const Json& row = v[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) throw ConfigError(where + ": ragged or short row");
      for (Eigen::Index j = 0; j < c; ++j) {
        if (!row[static_cast<std::size_t>(j)].is_number()) throw ConfigError(where + ": non-numeric entry");
        m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
      }
    }
    return m;
  }
  if (c != 1 && r != 1) throw ConfigError(where + ": a flat array only describes a vector");
  if (static_cast<Eigen::Index>(v.size()) != r * c) throw ConfigError(where + ": wrong length");
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r * c; ++i) {
    if (!v[static_cast<std::size_t>(i)].is_number()) throw ConfigError(where + ": non-numeric entry");
    m(i / c, i % c) = v[static_cast<std::size_t>(i)].get<double>();
  }
  return m;
}

/// Per-node series: a constant matrix or {"nodes": [...]} with one entry per node.
inline std::vector<Mat> series_value(const Json& v, std::size_t n, Eigen::Index r, Eigen::Index c, const std::string& where) {
  if (v.is_object()) {
    check_keys(v, {"nodes"}, where);
    const Json& nodes = v.at("nodes");
    if (!nodes.is_array() || nodes.size() != n)
      throw ConfigError(where + ".nodes: need " + std::to_string(n) + " entries, one per grid node");
    std::vector<Mat> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(matrix_value(nodes[k], r, c, where + ".nodes[" + std::to_string(k) + "]"));
    return out;
  }
  return std::vector<Mat>(n, matrix_value(v, r, c, where));
}

/// A list of `count` d x d matrices; a bare number is accepted when count is 1.
inline std::vector<Mat> rough_list(const Json& v, std::size_t count, Eigen::Index d, const std::string& where) {
  if (count == 1 && v.is_number()) return {matrix_value(v, d, d, where)};
  if (!v.is_array() || v.size() != count) throw ConfigError(where + ": need " + std::to_string(count) + " matrices");
  std::vector<Mat> out;
  for (std::size_t j = 0; j < count; ++j) out.push_back(matrix_value(v[j], d, d, where + "[" + std::to_string(j) + "]"));
  return out;
}

inline std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& file, std::size_t& header_cols) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open " + file.string());
  std::string line;
  std::vector<std::vector<double>> rows;
  header_cols = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header_cols == 0) {
      header_cols = cells.size();
      continue;
    }
    if (cells.size() != header_cols) throw InputError(file.string() + ": row length differs from the header");
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw InputError(file.string() + ": non-numeric cell \"" + c + "\"");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// Reads a rough path written by the lift command: columns k, t, the p path
/// values and the p*p step areas of [t_k, t_{k+1}] (zero on the last row).
inline RoughPath read_lift_csv(const std::filesystem::path& file, const TimeGrid& grid, std::size_t p, double gamma) {
  std::size_t cols = 0;
  const auto rows = detail::read_numeric_csv(file, cols);
  if (cols != 2 + p + p * p) throw ConfigError(file.string() + ": expected 2 + p + p*p columns");
  if (rows.size() != grid.size()) throw ConfigError(file.string() + ": node count differs from the grid");
  const auto P = static_cast<Eigen::Index>(p);
  Mat x(P, static_cast<Eigen::Index>(rows.size()));
  std::vector<Mat> areas;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (std::abs(rows[k][1] - grid[k]) > 1e-12 * std::max(1.0, grid.horizon()))
      throw ConfigError(file.string() + ": time column differs from the grid");
    for (std::size_t j = 0; j < p; ++j) x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = rows[k][2 + j];
    if (k + 1 < rows.size()) {
      Mat a(P, P);
      for (std::size_t i = 0; i < p * p; ++i) a(static_cast<Eigen::Index>(i / p), static_cast<Eigen::Index>(i % p)) = rows[k][2 + p + i];
      areas.push_back(a);
    }
  }
  const RoughPath plain(grid, x, areas, gamma, false);
  const bool geometric = geometric_residual(plain) <= 1e-10 * chen_scale(plain);
  return RoughPath(grid, std::move(x), std::move(areas), gamma, geometric);
}

/// Samples of a path on the refined grid: columns t, x_1..x_p.
inline Mat read_samples_csv(const std::filesystem::path& file, const TimeGrid& fine, std::size_t p) {
  std::size_t cols = 0;
  const auto rows = detail::read_numeric_csv(file, cols);
  if (cols != 1 + p) throw ConfigError(file.string() + ": expected 1 + p columns");
  if (rows.size() != fine.size()) throw ConfigError(file.string() + ": need one row per refined grid node");
  Mat x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (std::abs(rows[k][0] - fine[k]) > 1e-12 * std::max(1.0, fine.horizon()))
      throw ConfigError(file.string() + ": time column differs from the refined grid");
    for (std::size_t j = 0; j < p; ++j) x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = rows[k][1 + j];
  }
  return x;
}

inline RunConfig parse_config(const Json& doc, const std::filesystem::path& base_dir = {}) {
  using detail::check_keys;
  using detail::get_or;
  check_keys(doc, {"schema", "name", "dims", "grid", "regularity", "drift", "cost", "rough", "initial", "path",
                   "allow_s4r_violation", "simulation", "gap", "stability", "randomize"},
             "config");
  if (!doc.contains("schema") || !doc["schema"].is_number_integer() || doc["schema"].get<int>() != 1)
    throw ConfigError("config: \"schema\": 1 is required");
  for (const char* key : {"dims", "grid", "drift", "cost", "initial"})
    if (!doc.contains(key)) throw ConfigError(std::string("config: missing section \"") + key + "\"");
  RunConfig rc;
  rc.doc = doc;
  rc.base_dir = base_dir;
  rc.name = get_or<std::string>(doc, "name", "problem", "config");
  const Json& grid = doc["grid"];
  check_keys(grid, {"T", "N"}, "grid");
  rc.horizon = get_or<double>(grid, "T", 1.0, "grid");
  rc.steps = get_or<std::size_t>(grid, "N", 256, "grid");
  check_keys(doc["dims"], {"d", "p", "q", "kappa"}, "dims");
  if (doc.contains("regularity")) check_keys(doc["regularity"], {"gamma", "beta", "beta_prime"}, "regularity");
  check_keys(doc["drift"], {"A", "B", "C", "Sigma"}, "drift");
  check_keys(doc["cost"], {"Q", "Qbar", "R", "S", "Q_T", "Qbar_T", "S_T", "lambda"}, "cost");
  if (doc.contains("rough")) check_keys(doc["rough"], {"A1", "C1", "A1_prime", "C1_prime"}, "rough");
  check_keys(doc["initial"], {"mean", "cov"}, "initial");

  if (doc.contains("path")) {
    const Json& p = doc["path"];
    check_keys(p, {"source", "seed", "refine", "slope", "file"}, "path");
    rc.path.kind = get_or<std::string>(p, "source", "zero", "path");
    rc.path.seed = get_or<std::uint64_t>(p, "seed", 1, "path");
    rc.path.refine = get_or<std::size_t>(p, "refine", 16, "path");
    rc.path.slope = get_or<std::vector<double>>(p, "slope", {}, "path");
    if (p.contains("file")) rc.path.file = base_dir / get_or<std::string>(p, "file", "", "path");
    static const std::set<std::string> kinds = {"zero", "linear", "brownian", "canonical", "file"};
    if (!kinds.count(rc.path.kind)) throw ConfigError("path.source: unknown source \"" + rc.path.kind + "\"");
    if ((rc.path.kind == "canonical" || rc.path.kind == "file") && rc.path.file.empty())
      throw ConfigError("path: source \"" + rc.path.kind + "\" needs a file");
  }
  if (doc.contains("simulation")) {
    const Json& s = doc["simulation"];
    check_keys(s, {"paths", "seed", "antithetic", "substeps", "keep_paths"}, "simulation");
    rc.sim.n_paths = get_or<std::size_t>(s, "paths", rc.sim.n_paths, "simulation");
    rc.sim.seed = get_or<std::uint64_t>(s, "seed", rc.sim.seed, "simulation");
    rc.sim.antithetic = get_or<bool>(s, "antithetic", false, "simulation");
    rc.sim.noise_substeps = get_or<std::size_t>(s, "substeps", 1, "simulation");
    rc.sim.keep_paths = get_or<std::size_t>(s, "keep_paths", 0, "simulation");
  }
  const auto kap = static_cast<Eigen::Index>(get_or<std::size_t>(doc["dims"], "kappa", 1, "dims"));
  if (doc.contains("gap")) {
    check_keys(doc["gap"], {"perturbations"}, "gap");
    const Json& list = doc["gap"].at("perturbations");
    if (!list.is_array()) throw ConfigError("gap.perturbations: expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string where = "gap.perturbations[" + std::to_string(i) + "]";
      check_keys(list[i], {"h", "profile"}, where);
      GapPerturbation g;
      g.h = detail::matrix_value(list[i].at("h"), kap, 1, where + ".h");
      g.profile = get_or<std::string>(list[i], "profile", "constant", where);
      if (g.profile != "constant" && g.profile != "ramp" && g.profile != "sine")
        throw ConfigError(where + ".profile: expected constant, ramp or sine");
      rc.gap.push_back(g);
    }
  }
  if (doc.contains("stability")) {
    const Json& s = doc["stability"];
    check_keys(s, {"pairs", "eps_min", "eps_max", "direction_seed", "bound", "paths", "ladder"}, "stability");
    auto& st = rc.stability;
    st.pairs = get_or(s, "pairs", st.pairs, "stability");
    st.eps_min = get_or(s, "eps_min", st.eps_min, "stability");
    st.eps_max = get_or(s, "eps_max", st.eps_max, "stability");
    st.direction_seed = get_or(s, "direction_seed", st.direction_seed, "stability");
    st.bound = get_or(s, "bound", st.bound, "stability");
    st.paths = get_or(s, "paths", st.paths, "stability");
    st.ladder = get_or(s, "ladder", st.ladder, "stability");
  }
  if (doc.contains("randomize")) {
    const Json& s = doc["randomize"];
    check_keys(s, {"outer", "outer_seed", "inner_paths"}, "randomize");
    rc.randomize.outer = get_or(s, "outer", rc.randomize.outer, "randomize");
    rc.randomize.outer_seed = get_or(s, "outer_seed", rc.randomize.outer_seed, "randomize");
    rc.randomize.inner_paths = get_or(s, "inner_paths", rc.randomize.inner_paths, "randomize");
  }
  return rc;
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + file.string() + ": " + e.what());
  }
  return parse_config(doc, file.parent_path());
}

inline TimeGrid config_grid(const RunConfig& rc) {
  if (rc.steps == 0) throw ConfigError("grid.N must be positive");
  if (!(rc.horizon > 0.0)) throw ConfigError("grid.T must be positive");
  return TimeGrid::uniform(rc.horizon, rc.steps);
}

/// Fine samples of the configured driving path (not available for lift files).
inline PathSamples config_samples(const RunConfig& rc, const TimeGrid& g, std::size_t p) {
  const PathSource& src = rc.path;
  if (src.refine == 0) throw ConfigError("path.refine must be positive");
  if (src.kind == "brownian") return PathSamples::brownian(src.seed, p, g, src.refine);
  if (src.kind == "canonical") {
    const TimeGrid fine = g.refined(src.refine);
    return {fine, read_samples_csv(src.file, fine, p), src.refine};
  }
  if (src.kind == "zero" || src.kind == "linear") {
    Vec slope = Vec::Zero(static_cast<Eigen::Index>(p));
    if (src.kind == "linear") {
      if (src.slope.size() != p) throw ConfigError("path.slope needs p entries");
      for (std::size_t j = 0; j < p; ++j) slope(static_cast<Eigen::Index>(j)) = src.slope[j];
    }
    return PathSamples::smooth([&](double t) { return Vec(slope * t); }, g, src.refine);
  }
  throw ConfigError("path source \"" + src.kind + "\" has no fine samples");
}

inline RoughPathPtr config_path(const RunConfig& rc, const TimeGrid& g, std::size_t p, double gamma) {
  if (rc.path.kind == "file") return std::make_shared<const RoughPath>(read_lift_csv(rc.path.file, g, p, gamma));
  return config_samples(rc, g, p).lift(g, gamma);
}

/// The problem of the document on its grid, validated.
inline ProblemSpec build_problem(const RunConfig& rc) {
  using detail::get_or;
  const Json& doc = rc.doc;
  ProblemSpec s;
  s.grid = config_grid(rc);
  const std::size_t n = s.grid.size();
  s.d = get_or<std::size_t>(doc["dims"], "d", 1, "dims");
  s.p = get_or<std::size_t>(doc["dims"], "p", 1, "dims");
  s.q = get_or<std::size_t>(doc["dims"], "q", 1, "dims");
  s.kappa = get_or<std::size_t>(doc["dims"], "kappa", 1, "dims");
  if (s.d == 0 || s.p == 0 || s.q == 0 || s.kappa == 0) throw ConfigError("dims must be positive");
  const auto D = static_cast<Eigen::Index>(s.d), K = static_cast<Eigen::Index>(s.kappa), Q = static_cast<Eigen::Index>(s.q);
  if (doc.contains("regularity")) {
    s.gamma = get_or(doc["regularity"], "gamma", s.gamma, "regularity");
    s.beta = get_or(doc["regularity"], "beta", s.beta, "regularity");
    s.beta_prime = get_or(doc["regularity"], "beta_prime", s.beta_prime, "regularity");
  }
  const Json& dr = doc["drift"];
  const auto series_or = [&](const Json& sec, const char* key, Eigen::Index r, Eigen::Index c, const std::string& where) {
    return sec.contains(key) ? detail::series_value(sec[key], n, r, c, where + "." + key)
                             : std::vector<Mat>(n, Mat::Zero(r, c));
  };
  s.drift.A = series_or(dr, "A", D, D, "drift");
  s.drift.B = series_or(dr, "B", D, K, "drift");
  s.drift.C = series_or(dr, "C", D, D, "drift");
  s.drift.Sigma = series_or(dr, "Sigma", D, Q, "drift");
  const Json& co = doc["cost"];
  s.cost.Q = series_or(co, "Q", D, D, "cost");
  s.cost.Qbar = series_or(co, "Qbar", D, D, "cost");
  if (!co.contains("R")) throw ConfigError("cost.R is required");
  s.cost.R = series_or(co, "R", K, K, "cost");
  s.cost.S = series_or(co, "S", D, D, "cost");
  const auto mat_or = [&](const char* key) {
    return co.contains(key) ? detail::matrix_value(co[key], D, D, std::string("cost.") + key) : Mat(Mat::Zero(D, D));
  };
  s.cost.Q_T = mat_or("Q_T");
  s.cost.Qbar_T = mat_or("Qbar_T");
  s.cost.S_T = mat_or("S_T");
  s.cost.lambda = get_or(co, "lambda", 1.0, "cost");
  s.eta = config_path(rc, s.grid, s.p, s.gamma);
  const Json rough = doc.contains("rough") ? doc["rough"] : Json::object();
  const auto coeff = [&](const char* key, const char* prime) {
    if (!rough.contains(key)) return RoughCoefficient::zero(s.eta, s.d);
    const std::vector<Mat> g = detail::rough_list(rough[key], s.p, D, std::string("rough.") + key);
    std::vector<Mat> gp;
    if (rough.contains(prime)) gp = detail::rough_list(rough[prime], s.p * s.p, D, std::string("rough.") + prime);
    return RoughCoefficient::constant(s.eta, g, gp);
  };
  s.A1 = coeff("A1", "A1_prime");
  s.C1 = coeff("C1", "C1_prime");
  const Json& in = doc["initial"];
  if (!in.contains("mean")) throw ConfigError("initial.mean is required");
  s.mean0 = detail::matrix_value(in["mean"], D, 1, "initial.mean");
  s.cov0 = in.contains("cov") ? detail::matrix_value(in["cov"], D, D, "initial.cov") : Mat(Mat::Zero(D, D));
  s.allow_s4r_violation = get_or(doc, "allow_s4r_violation", false, "config");
  s.validate();
  return s;
}

/// Deterministic perturbation h per node for one gap entry.
inline std::vector<Vec> perturbation_nodes(const GapPerturbation& g, const TimeGrid& grid) {
  std::vector<Vec> h(grid.size());
  const double T = grid.horizon();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    double f = 1.0;
    if (g.profile == "ramp") f = grid[k] / T;
    if (g.profile == "sine") f = std::sin(3.14159265358979323846 * grid[k] / T);
    h[k] = f * g.h;
  }
  return h;
}

}  // namespace rmfg
