#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rmfg/errors.hpp"

namespace rmfg {

/// Partition 0 = t_0 < t_1 < ... < t_N = T of the time horizon.
class TimeGrid {
 public:
  TimeGrid() = default;

  explicit TimeGrid(std::vector<double> nodes) : t_(std::move(nodes)) {
    if (t_.size() < 2) throw ConfigError("time grid needs at least one step");
    if (t_.front() != 0.0) throw ConfigError("time grid must start at t_0 = 0");
    for (std::size_t k = 0; k + 1 < t_.size(); ++k) {
      if (!std::isfinite(t_[k + 1]) || !(t_[k + 1] > t_[k]))
        throw ConfigError("time grid nodes must be finite and strictly increasing (node " +
                          std::to_string(k + 1) + ")");
    }
  }

  static TimeGrid uniform(double horizon, std::size_t steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive and finite");
    if (steps == 0) throw ConfigError("step count must be at least 1");
    std::vector<double> t(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) t[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
    t[steps] = horizon;
    TimeGrid g;
    g.t_ = std::move(t);
    return g;
  }

  std::size_t steps() const { return t_.size() - 1; }
  std::size_t size() const { return t_.size(); }
  double horizon() const { return t_.back(); }
  double operator[](std::size_t k) const { return t_[k]; }
  double dt(std::size_t k) const { return t_[k + 1] - t_[k]; }
  const std::vector<double>& nodes() const { return t_; }

  /// Each interval split into r equal pieces.
  TimeGrid refined(std::size_t r) const {
    if (r == 0) throw ConfigError("refinement factor must be at least 1");
    std::vector<double> t;
    t.reserve(steps() * r + 1);
    for (std::size_t k = 0; k < steps(); ++k)
      for (std::size_t j = 0; j < r; ++j)
        t.push_back(t_[k] + dt(k) * static_cast<double>(j) / static_cast<double>(r));
    t.push_back(t_.back());
    TimeGrid g;
    g.t_ = std::move(t);
    return g;
  }

  /// Keeps every f-th node; the step count must be divisible by f.
  TimeGrid coarsened(std::size_t f) const {
    if (f == 0 || steps() % f != 0)
      throw ConfigError("cannot coarsen a grid of " + std::to_string(steps()) + " steps by " + std::to_string(f));
    std::vector<double> t;
    for (std::size_t k = 0; k <= steps(); k += f) t.push_back(t_[k]);
    TimeGrid g;
    g.t_ = std::move(t);
    return g;
  }

  bool operator==(const TimeGrid& o) const { return t_ == o.t_; }
  bool operator!=(const TimeGrid& o) const { return !(*this == o); }

 private:
  std::vector<double> t_;
};

}  // namespace rmfg
