#pragma once

#include "mobility/nonlocal_solver.hpp"
#include "mobility/schedule.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <vector>

namespace mobility {

/// Truck speed lambda(t, x, y) stored on a coarse uniform grid over
/// [0, horizon] x [x_lo, x_hi] x [0, y_max] and interpolated multilinearly
/// (clamped outside). With one y point the field ignores y.
struct VelocityField {
  double horizon = 1.0;
  double x_lo = 0.0, x_hi = 1.0;
  double y_max = 1.0;
  int nt = 2, nx = 2, ny = 1;
  double lambda_min = 0.0, lambda_max = 1.0;
  double lipschitz = 0.0;
  Eigen::ArrayXd values;  // index (it * nx + ix) * ny + iy

  static VelocityField constant(double value, double horizon, double x_lo, double x_hi, int nt, int nx,
                                double lambda_min, double lambda_max, double lipschitz);

  Eigen::Index index(int it, int ix, int iy = 0) const { return (static_cast<Eigen::Index>(it) * nx + ix) * ny + iy; }
  double ht() const { return horizon / (nt - 1); }
  double hx() const { return (x_hi - x_lo) / (nx - 1); }
  double hy() const { return ny > 1 ? y_max / (ny - 1) : 0.0; }
  bool depends_on_y() const { return ny > 1; }

  double operator()(double t, double x, double y = 0.0) const;

  /// Largest violation of the bounds or of the Lipschitz bound between grid
  /// neighbours (for a multilinear interpolant, the neighbour condition is
  /// equivalent to the l1 Lipschitz bound everywhere).
  double violation() const;
  /// Throws LambdaOutOfSet if violation() > tol.
  void validate(double tol = 1e-9) const;
};

/// Clip to the bounds, then repair the Lipschitz bound by repeatedly moving
/// violating neighbour pairs symmetrically towards their mean. Feasible input
/// is returned unchanged. Not an orthogonal projection.
VelocityField project_velocity(VelocityField field, double tol = 1e-12, int max_sweeps = 200000);

/// Cell averages of f on a uniform grid of `cells` cells over [lo, hi]
/// (composite Gauss-Legendre).
Eigen::ArrayXd cell_averages(const std::function<double(double)>& f, double lo, double hi, int cells);

/// Background traffic rho and truck density q on one road [x_lo, x_hi].
/// rho follows a nonlocal law driven by the whole-road load; the truck speed
/// reads rho through the window [b(x), d(x)] (affine, physical coordinates).
struct FreightPair {
  double x_lo = 0.0, x_hi = 1.0;
  double horizon = 1.0;
  int cells = 200;
  int steps = 80;
  VelocityLaw background_law = inverse_speed(1.0, 1.0);
  PiecewiseSchedule u1;  // background inflow at x_lo
  PiecewiseSchedule u2;  // truck inflow at x_lo
  Eigen::ArrayXd rho0;   // cell averages (empty means zero)
  Eigen::ArrayXd q0;
  double b0 = 0.0, b1 = 1.0, d0 = 0.0, d1 = 1.0;  // default window is empty
  /// Solve rho even when the truck speed ignores it (needed for J2).
  bool solve_background = true;
  SolverOptions background_solver;

  double dx() const { return (x_hi - x_lo) / cells; }
  double dt() const { return horizon / steps; }
};

enum class TruckMethod { characteristics, finite_volume };

struct FreightSolution {
  double x_lo = 0.0, x_hi = 1.0, horizon = 1.0;
  Eigen::ArrayXXd rho;  // (steps + 1) x cells, zero if not solved
  Eigen::ArrayXXd q;
  Eigen::ArrayXd q_inflow;   // per step, average rate
  Eigen::ArrayXd q_outflow;
  bool background_solved = false;

  int steps() const { return static_cast<int>(q.rows()) - 1; }
  int cells() const { return static_cast<int>(q.cols()); }
  double dx() const { return (x_hi - x_lo) / cells(); }
  double dt() const { return horizon / steps(); }
  /// (initial + inflow - outflow - final) / max(1, initial + inflow).
  double mass_residual() const;
};

/// Background density only; rows on the pair's time grid.
Eigen::ArrayXXd solve_background(const FreightPair& pair);

/// Validates lambda and solves rho (when needed) then q.
FreightSolution solve_freight_pair(const FreightPair& pair, const VelocityField& lambda,
                                   TruckMethod method = TruckMethod::characteristics);

/// Truck equation only, with a precomputed background (empty when unused).
/// Does not validate lambda.
FreightSolution solve_trucks(const FreightPair& pair, const Eigen::ArrayXXd& rho, const VelocityField& lambda,
                             TruckMethod method = TruckMethod::characteristics);

/// Unnormalized spread of one row: int x^2 w q dx - (int x w q dx)^2 with
/// w = 1 (+ rho when given). Cell moments are exact for piecewise-constant q.
double spread(const Eigen::ArrayXd& q, double x_lo, double x_hi, const Eigen::ArrayXd* rho = nullptr);
/// Variance of q / mass for one row (mass-normalized).
double normalized_variance(const Eigen::ArrayXd& q, double x_lo, double x_hi);

struct VarianceObjectives {
  double J1 = 0.0;
  double J2 = 0.0;
};

/// Time integrals (trapezoid over the rows) of spread without and with the
/// background weight.
VarianceObjectives variance_objectives(const FreightSolution& solution);

enum class PlatoonObjective { J1, J2 };

struct PlatoonOptions {
  PlatoonObjective objective = PlatoonObjective::J1;
  double fd_step = 1e-4;
  double initial_step = 0.1;
  double min_step = 1e-5;
  double max_step = 0.5;
  int threads = 1;
  TruckMethod method = TruckMethod::characteristics;
};

struct PlatoonTraceEntry {
  int simulations = 0;
  double objective = 0.0;
};

struct PlatoonResult {
  VelocityField best;
  double objective = 0.0;
  std::vector<PlatoonTraceEntry> trace;  // accepted iterates, nonincreasing
  int simulations = 0;
  bool budget_exhausted = false;
};

/// Projected finite-difference descent over the control-grid values,
/// starting from the projection of `initial`. `budget` caps truck solves.
PlatoonResult optimize_velocity(const FreightPair& pair, const VelocityField& initial, int budget,
                                const PlatoonOptions& options = {});

/// Columns t,x,lambda sampled at cell centres on the solution grid.
void write_velocity_csv(std::ostream& os, const VelocityField& lambda, const FreightSolution& grid, int time_stride = 1);
/// Columns t,x,q.
void write_truck_csv(std::ostream& os, const FreightSolution& solution, int time_stride = 1);

}  // namespace mobility
