#pragma once

#include <Eigen/Core>

#include <vector>

namespace mobility {

/// One piece of a time function: value + slope * (t - t_start) on
/// [t_start, t_end). Splits use slope 0.
struct SchedulePiece {
  double t_start = 0.0;
  double t_end = 0.0;
  double value = 0.0;
  double slope = 0.0;
};

/// Piecewise-linear (usually piecewise-constant) function of time, zero
/// outside its pieces. Pieces must not overlap.
class PiecewiseSchedule {
 public:
  PiecewiseSchedule() = default;
  explicit PiecewiseSchedule(std::vector<SchedulePiece> pieces);

  static PiecewiseSchedule constant(double value, double t_start, double t_end);

  double value(double t) const;
  /// Exact integral over [a, b].
  double integral(double a, double b) const;
  double average(double a, double b) const { return integral(a, b) / (b - a); }

  /// Step averages on a uniform grid of `steps` intervals over [0, horizon].
  Eigen::ArrayXd step_averages(double horizon, int steps) const;

  const std::vector<SchedulePiece>& pieces() const noexcept { return pieces_; }
  bool empty() const noexcept { return pieces_.empty(); }
  double min_value() const;

 private:
  std::vector<SchedulePiece> pieces_;
};

}  // namespace mobility
