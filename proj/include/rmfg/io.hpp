#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rmfg/config.hpp"

namespace rmfg {

/// Shortest round-trip text of a double ("%.17g").
inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// CSV file with a header row and a closing "#manifest:" comment line.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& file, const std::vector<std::string>& header, std::string manifest)
      : out_(file, std::ios::binary), manifest_(std::move(manifest)) {
    if (!out_) throw ConfigError("cannot write " + file.string());
    row_strings(header);
  }
  ~CsvWriter() { out_ << "#manifest: " << manifest_ << "\n"; }
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  void row(const std::vector<double>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << fmt(cells[i]);
    out_ << "\n";
  }

 private:
  std::ofstream out_;
  std::string manifest_;
};

namespace detail {
inline void append_numbered(std::vector<std::string>& h, const std::string& stem, std::size_t n) {
  for (std::size_t i = 1; i <= n; ++i) h.push_back(stem + "_" + std::to_string(i));
}
inline void append_matrix(std::vector<std::string>& h, const std::string& stem, std::size_t r, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) h.push_back(stem + "[" + std::to_string(i) + "][" + std::to_string(j) + "]");
}
inline void push_matrix(std::vector<double>& row, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
}
}  // namespace detail

/// k, t, eta_1..eta_p, area[i][j] of [t_k, t_{k+1}] (zeros on the last row).
inline void write_lift(const std::filesystem::path& file, const RoughPath& rp, const std::string& manifest) {
  const std::size_t p = rp.dim();
  std::vector<std::string> h = {"k", "t"};
  detail::append_numbered(h, "eta", p);
  detail::append_matrix(h, "area", p, p);
  CsvWriter w(file, h, manifest);
  for (std::size_t k = 0; k < rp.grid().size(); ++k) {
    std::vector<double> row = {static_cast<double>(k), rp.grid()[k]};
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(p); ++j) row.push_back(rp.values()(j, static_cast<Eigen::Index>(k)));
    detail::push_matrix(row, k < rp.steps() ? rp.step_area(k) : Mat(Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))));
    w.row(row);
  }
}

/// k, t, lambda, ptilde[i][j], pbar[i][j].
inline void write_riccati(const std::filesystem::path& file, const ProblemSpec& s, const Equilibrium& eq, const std::string& manifest) {
  std::vector<std::string> h = {"k", "t", "lambda"};
  detail::append_matrix(h, "ptilde", s.d, s.d);
  detail::append_matrix(h, "pbar", s.d, s.d);
  CsvWriter w(file, h, manifest);
  for (std::size_t k = 0; k < s.grid.size(); ++k) {
    std::vector<double> row = {static_cast<double>(k), s.grid[k], eq.e.lambda[k]};
    detail::push_matrix(row, eq.ptilde.node(k));
    detail::push_matrix(row, eq.pbar.node(k));
    w.row(row);
  }
}

/// k, t, m_1..m_d, ybar_1..ybar_d, pbar[i][j].
inline void write_equilibrium(const std::filesystem::path& file, const ProblemSpec& s, const Equilibrium& eq, const std::string& manifest) {
  std::vector<std::string> h = {"k", "t"};
  detail::append_numbered(h, "m", s.d);
  detail::append_numbered(h, "ybar", s.d);
  detail::append_matrix(h, "pbar", s.d, s.d);
  CsvWriter w(file, h, manifest);
  for (std::size_t k = 0; k < s.grid.size(); ++k) {
    std::vector<double> row = {static_cast<double>(k), s.grid[k]};
    detail::push_matrix(row, eq.m[k]);
    detail::push_matrix(row, eq.ybar[k]);
    detail::push_matrix(row, eq.pbar.node(k));
    w.row(row);
  }
}

/// k, t, mean_1..mean_d, stderr_1..stderr_d, cov[i][j].
inline void write_simulation(const std::filesystem::path& file, const ProblemSpec& s, const SimResult& r, const std::string& manifest) {
  std::vector<std::string> h = {"k", "t"};
  detail::append_numbered(h, "mean", s.d);
  detail::append_numbered(h, "stderr", s.d);
  detail::append_matrix(h, "cov", s.d, s.d);
  CsvWriter w(file, h, manifest);
  for (std::size_t k = 0; k < s.grid.size(); ++k) {
    std::vector<double> row = {static_cast<double>(k), s.grid[k]};
    detail::push_matrix(row, r.mean[k]);
    detail::push_matrix(row, r.stderr_[k]);
    detail::push_matrix(row, r.cov[k]);
    w.row(row);
  }
}

inline void write_cost_summary(const std::filesystem::path& file, const SimResult& r, const std::string& manifest) {
  CsvWriter w(file, {"J_hat", "stderr", "n_paths", "seed"}, manifest);
  w.row_strings({fmt(r.J), fmt(r.J_stderr), std::to_string(r.n_paths), std::to_string(r.seed)});
}

inline void write_stability(const std::filesystem::path& file, const StabilityReport& rep, const std::string& manifest) {
  CsvWriter w(file, {"pair_id", "num_mean", "num_ctrl", "num_J", "num_law", "den", "ratio"}, manifest);
  for (std::size_t i = 0; i < rep.pairs.size(); ++i) {
    const auto& p = rep.pairs[i];
    w.row({static_cast<double>(i), p.num_mean, p.num_ctrl, p.num_J, p.num_law, p.den, p.ratio});
  }
}

inline void write_modulus(const std::filesystem::path& file, const std::vector<ModulusRow>& rows, const std::string& manifest) {
  CsvWriter w(file, {"eps", "rho", "distance"}, manifest);
  for (const auto& r : rows) w.row({r.eps, r.rho, r.distance});
}

}  // namespace rmfg
