#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace mobility {

/// Cumulative integral of the piecewise-linear reconstruction through the
/// cell centres of a uniform grid on [0, 1] (constant extension over the
/// two boundary half cells). Building is O(N); each query is O(1).
template <typename Scalar>
class RowIntegrator {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  template <typename Derived>
  explicit RowIntegrator(const Eigen::ArrayBase<Derived>& row)
      : values_(row.derived().template cast<Scalar>()),
        dx_(Scalar(1) / static_cast<Scalar>(row.size())),
        prefix_(row.size()) {
    const Eigen::Index n = values_.size();
    prefix_(0) = dx_ / 2 * values_(0);
    for (Eigen::Index j = 1; j < n; ++j)
      prefix_(j) = prefix_(j - 1) + dx_ * (values_(j - 1) + values_(j)) / 2;
  }

  /// Integral of the reconstruction over [0, y], y clamped to [0, 1].
  Scalar cumulative(Scalar y) const {
    const Eigen::Index n = values_.size();
    y = std::clamp(y, Scalar(0), Scalar(1));
    const Scalar first_centre = dx_ / 2;
    if (y <= first_centre) return values_(0) * y;
    const Scalar last_centre = Scalar(1) - dx_ / 2;
    if (y >= last_centre) return prefix_(n - 1) + values_(n - 1) * (y - last_centre);
    const Scalar s = (y - first_centre) / dx_;
    Eigen::Index j = std::min<Eigen::Index>(static_cast<Eigen::Index>(s), n - 2);
    const Scalar h = y - (first_centre + static_cast<Scalar>(j) * dx_);
    const Scalar slope = (values_(j + 1) - values_(j)) / dx_;
    return prefix_(j) + values_(j) * h + slope * h * h / 2;
  }

  Scalar integral(Scalar lo, Scalar hi) const { return cumulative(hi) - cumulative(lo); }
  Scalar total() const { return cumulative(Scalar(1)); }

 private:
  Array values_;
  Scalar dx_;
  Array prefix_;
};

/// Value at `y` of the piecewise-linear interpolant through `knots` sampled
/// uniformly on [0, length] (knots.size() - 1 intervals), clamped at the ends.
template <typename Derived>
typename Derived::Scalar interpolate_uniform(const Eigen::ArrayBase<Derived>& knots,
                                             typename Derived::Scalar length,
                                             typename Derived::Scalar y) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index intervals = knots.size() - 1;
  if (intervals <= 0) return knots(0);
  const Scalar h = length / static_cast<Scalar>(intervals);
  const Scalar s = std::clamp(y / h, Scalar(0), static_cast<Scalar>(intervals));
  const Eigen::Index j = std::min<Eigen::Index>(static_cast<Eigen::Index>(s), intervals - 1);
  const Scalar frac = s - static_cast<Scalar>(j);
  return knots(j) + frac * (knots(j + 1) - knots(j));
}

/// Composite trapezoidal rule for samples on a uniform grid with spacing h.
template <typename Derived>
typename Derived::Scalar trapezoid(const Eigen::ArrayBase<Derived>& samples,
                                   typename Derived::Scalar h) {
  const Eigen::Index n = samples.size();
  if (n < 2) return typename Derived::Scalar(0);
  return h * (samples.sum() - (samples(0) + samples(n - 1)) / 2);
}

}  // namespace mobility
