#pragma once

#include <cmath>
#include <vector>

#include "rmfg/errors.hpp"
#include "rmfg/rough_path.hpp"

namespace rmfg {

/// Matrix-valued function of time known on a grid, evaluated inside step k at
/// t_k + theta (t_{k+1} - t_k).
///
///  - LeftConstant: the node value of t_k on the whole step (bounded measurable data).
///  - Linear: interpolation between the left value and a right value, which
///    defaults to the next node but may be a separate left limit.
///  - Quadratic: Lagrange interpolation through the step's two ends and its midpoint.
class StepSeries {
 public:
  enum class Mode { LeftConstant, Linear, Quadratic };

  StepSeries() = default;

  static StepSeries left_constant(std::vector<Mat> nodes) {
    StepSeries s;
    s.mode_ = Mode::LeftConstant;
    s.node_ = std::move(nodes);
    s.check();
    return s;
  }

  static StepSeries linear(std::vector<Mat> nodes) {
    StepSeries s;
    s.mode_ = Mode::Linear;
    s.node_ = std::move(nodes);
    s.check();
    return s;
  }

  /// Linear within each step between left[k] and right[k] (a left limit at t_{k+1}).
  static StepSeries linear(std::vector<Mat> left, std::vector<Mat> right) {
    StepSeries s;
    s.mode_ = Mode::Linear;
    s.node_ = std::move(left);
    s.right_ = std::move(right);
    if (s.right_.size() + 1 != s.node_.size()) throw ConfigError("series: need one right limit per step");
    s.check();
    return s;
  }

  static StepSeries quadratic(std::vector<Mat> nodes, std::vector<Mat> mids) {
    StepSeries s;
    s.mode_ = Mode::Quadratic;
    s.node_ = std::move(nodes);
    s.mid_ = std::move(mids);
    if (s.mid_.size() + 1 != s.node_.size()) throw ConfigError("series: need one midpoint value per step");
    s.check();
    return s;
  }

  Mode mode() const { return mode_; }
  std::size_t size() const { return node_.size(); }
  std::size_t steps() const { return node_.size() - 1; }
  const Mat& node(std::size_t k) const { return node_[k]; }
  const std::vector<Mat>& nodes() const { return node_; }
  const std::vector<Mat>& mids() const { return mid_; }
  bool has_mids() const { return !mid_.empty(); }

  Mat at(std::size_t k, double theta) const {
    switch (mode_) {
      case Mode::LeftConstant:
        return node_[k];
      case Mode::Linear: {
        if (theta == 0.0) return node_[k];
        const Mat& r = right_.empty() ? node_[k + 1] : right_[k];
        if (theta == 1.0) return r;
        return (1.0 - theta) * node_[k] + theta * r;
      }
      case Mode::Quadratic: {
        if (theta == 0.0) return node_[k];
        if (theta == 0.5) return mid_[k];
        if (theta == 1.0) return node_[k + 1];
        const double l0 = 2.0 * (theta - 0.5) * (theta - 1.0);
        const double lm = -4.0 * theta * (theta - 1.0);
        const double l1 = 2.0 * theta * (theta - 0.5);
        return l0 * node_[k] + lm * mid_[k] + l1 * node_[k + 1];
      }
    }
    return node_[k];
  }

  /// Midpoint value when stored, otherwise the interpolated one.
  Mat mid(std::size_t k) const { return has_mids() ? mid_[k] : at(k, 0.5); }

  /// Every f-th node kept (left-constant semantics survive this restriction).
  StepSeries coarsened(std::size_t f) const {
    std::vector<Mat> nodes;
    for (std::size_t k = 0; k < node_.size(); k += f) nodes.push_back(node_[k]);
    if (mode_ == Mode::LeftConstant) return left_constant(std::move(nodes));
    return linear(std::move(nodes));
  }

 private:
  void check() const {
    if (node_.size() < 2) throw ConfigError("series: need at least two nodes");
    for (const auto& m : node_)
      if (m.rows() != node_[0].rows() || m.cols() != node_[0].cols()) throw ConfigError("series: values change shape");
  }

  Mode mode_ = Mode::LeftConstant;
  std::vector<Mat> node_;
  std::vector<Mat> right_;
  std::vector<Mat> mid_;
};

/// Positive scalar path interpolated log-linearly inside each step.
class ScalarSeries {
 public:
  ScalarSeries() = default;
  explicit ScalarSeries(std::vector<double> nodes) : v_(std::move(nodes)) {}
  static ScalarSeries ones(std::size_t n) { return ScalarSeries(std::vector<double>(n, 1.0)); }

  double node(std::size_t k) const { return v_[k]; }
  std::size_t size() const { return v_.size(); }
  const std::vector<double>& nodes() const { return v_; }
  double at(std::size_t k, double theta) const {
    if (theta == 0.0) return v_[k];
    if (theta == 1.0) return v_[k + 1];
    if (v_[k] == v_[k + 1]) return v_[k];
    return v_[k] * std::pow(v_[k + 1] / v_[k], theta);
  }

 private:
  std::vector<double> v_;
};

}  // namespace rmfg
