#include "mobility/schedule.hpp"

#include "mobility/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mobility {

PiecewiseSchedule::PiecewiseSchedule(std::vector<SchedulePiece> pieces) : pieces_(std::move(pieces)) {
  std::sort(pieces_.begin(), pieces_.end(),
            [](const SchedulePiece& a, const SchedulePiece& b) { return a.t_start < b.t_start; });
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    const auto& p = pieces_[i];
    if (!std::isfinite(p.t_start) || !std::isfinite(p.t_end) || !std::isfinite(p.value) ||
        !std::isfinite(p.slope) || p.t_end < p.t_start)
      throw Error(Errc::InvalidScenario, "schedule piece must have finite values and t_start <= t_end");
    if (i > 0 && p.t_start < pieces_[i - 1].t_end)
      throw Error(Errc::InvalidScenario, "schedule pieces overlap");
  }
}

PiecewiseSchedule PiecewiseSchedule::constant(double value, double t_start, double t_end) {
  return PiecewiseSchedule({SchedulePiece{t_start, t_end, value, 0.0}});
}

double PiecewiseSchedule::value(double t) const {
  for (const auto& p : pieces_)
    if (t >= p.t_start && t < p.t_end) return p.value + p.slope * (t - p.t_start);
  return 0.0;
}

double PiecewiseSchedule::integral(double a, double b) const {
  double sign = 1.0;
  if (b < a) {
    std::swap(a, b);
    sign = -1.0;
  }
  double total = 0.0;
  for (const auto& p : pieces_) {
    const double lo = std::max(a, p.t_start);
    const double hi = std::min(b, p.t_end);
    if (hi <= lo) continue;
    const double s0 = lo - p.t_start;
    const double s1 = hi - p.t_start;
    total += p.value * (hi - lo) + p.slope * (s1 * s1 - s0 * s0) / 2;
  }
  return sign * total;
}

Eigen::ArrayXd PiecewiseSchedule::step_averages(double horizon, int steps) const {
  Eigen::ArrayXd out(steps);
  const double dt = horizon / steps;
  for (int n = 0; n < steps; ++n) out(n) = integral(n * dt, (n + 1) * dt) / dt;
  return out;
}

double PiecewiseSchedule::min_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& p : pieces_) {
    m = std::min(m, p.value);
    m = std::min(m, p.value + p.slope * (p.t_end - p.t_start));
  }
  return pieces_.empty() ? 0.0 : m;
}

}  // namespace mobility
