#pragma once

#include "mobility/schedule.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace mobility {

/// Speed as a function of time and the nonlocal density argument W.
struct VelocityLaw {
  std::function<double(double t, double W)> speed;
  /// Declares the law nonincreasing in W; checked by sampling.
  bool congestion_type = false;
  std::string description;

  double operator()(double t, double W) const { return speed(t, W); }
};

VelocityLaw constant_speed(double c);
/// vmax / (1 + alpha * W).
VelocityLaw inverse_speed(double vmax, double alpha);

/// Samples the law on [0, horizon] x [0, w_max] and throws InvalidVelocity
/// if it is not finite and >= floor, or not monotone when declared so.
void check_velocity(const VelocityLaw& law, double horizon, double w_max, double floor = 1e-9);

/// Integration window [b(x), d(x)] with affine b and d.
struct NonlocalWindow {
  double b0 = 0.0, b1 = 0.0;
  double d0 = 1.0, d1 = 0.0;

  static NonlocalWindow whole() { return {}; }
  /// b(x) = b0 + b1 x, d(x) = d0 + d1 x; both must map [0,1] into [0,1]
  /// with b <= d.
  static NonlocalWindow affine(double b0, double b1, double d0, double d1);

  bool whole_link() const noexcept { return b0 == 0.0 && b1 == 0.0 && d0 == 1.0 && d1 == 0.0; }
  double lower(double x) const noexcept { return b0 + b1 * x; }
  double upper(double x) const noexcept { return d0 + d1 * x; }
};

/// W(x) = integral of the piecewise-linear reconstruction of the cell
/// averages over [b(x), d(x)].
double nonlocal_term(const Eigen::ArrayXd& rho_row, const NonlocalWindow& window, double x);

enum class LinkMethod { automatic, characteristics, finite_volume };

struct SolverOptions {
  LinkMethod method = LinkMethod::automatic;
  int cells = 400;
  double cfl = 0.9;
  double picard_tol = 1e-10;
  int picard_cap = 10000;
  /// Characteristics restart from the projected cell averages after this
  /// much time (capped by the horizon).
  double window_length = 0.5;
  int max_halvings = 8;
};

/// Single-commodity solution on one link. Rows of `rho` are times
/// t_n = n * dt, n = 0..steps; `u` and `y` are step-averaged fluxes.
struct LinkState {
  double horizon = 0.0;
  Eigen::ArrayXXd rho;
  Eigen::ArrayXd u;
  Eigen::ArrayXd y;
  Eigen::ArrayXd mass;
  VelocityLaw law;
  NonlocalWindow window;

  int steps() const noexcept { return static_cast<int>(u.size()); }
  int cells() const noexcept { return static_cast<int>(rho.cols()); }
  double dt() const noexcept { return horizon / steps(); }
  double dx() const noexcept { return 1.0 / cells(); }
};

/// Advances K commodities that share one speed field on a unit link, one
/// time step at a time. Inflows are constant over each step.
class LinkStepper {
 public:
  LinkStepper(VelocityLaw law, NonlocalWindow window, const SolverOptions& options,
              const std::vector<Eigen::ArrayXd>& rho0, double dt);
  ~LinkStepper();
  LinkStepper(LinkStepper&&) noexcept;
  LinkStepper& operator=(LinkStepper&&) noexcept;

  /// Moves from the current time t to t + dt with inflow rates `inflow`
  /// (one per commodity); returns the step-averaged outflow rates.
  Eigen::ArrayXd step(const Eigen::ArrayXd& inflow);

  double time() const noexcept;
  int commodities() const noexcept;
  /// Current cell averages for commodity k.
  const Eigen::ArrayXd& density(int k) const;
  Eigen::ArrayXd aggregate() const;
  LinkMethod method() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

LinkState solve_link(const VelocityLaw& law, const NonlocalWindow& window, const Eigen::ArrayXd& inflow,
                     const Eigen::ArrayXd& rho0, double horizon, const SolverOptions& options = {});

LinkState solve_link(const VelocityLaw& law, const NonlocalWindow& window, const PiecewiseSchedule& inflow,
                     const Eigen::ArrayXd& rho0, double horizon, int steps,
                     const SolverOptions& options = {});

struct CharacteristicTrajectory {
  Eigen::ArrayXd t;
  Eigen::ArrayXd xi;
  int iterations = 0;
};

/// Whole-link characteristic from the inlet: solves the integral equality
/// xi(t) = int_0^t lambda(s, W(s; xi)) ds on the knots of `inflow`'s time
/// grid by plain Picard iteration over the whole trajectory.
CharacteristicTrajectory solve_characteristic(const VelocityLaw& law, const Eigen::ArrayXd& inflow,
                                              const Eigen::ArrayXd& rho0, double horizon,
                                              double tol = 1e-10, int cap = 10000);

/// y(t) = lambda(t, W(t, 1)) * rho(t, 1), with rho(t, 1) taken from the last
/// cell and both linearly interpolated in time.
double outflux(const LinkState& state, double t);

/// Number of steps keeping lambda_max * dt <= cfl * dx.
int steps_for_cfl(double horizon, int cells, double lambda_max, double cfl = 0.9);

void write_density_csv(std::ostream& os, const LinkState& state, int time_stride = 1);
void write_flux_csv(std::ostream& os, const LinkState& state);

}  // namespace mobility
