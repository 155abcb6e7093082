#include "mobility/platoon_flow.hpp"

#include "mobility/csv.hpp"
#include "mobility/error.hpp"
#include "mobility/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <thread>

namespace mobility {

VelocityField VelocityField::constant(double value, double horizon, double x_lo, double x_hi, int nt, int nx,
                                      double lambda_min, double lambda_max, double lipschitz) {
  VelocityField f;
  f.horizon = horizon;
  f.x_lo = x_lo;
  f.x_hi = x_hi;
  f.nt = nt;
  f.nx = nx;
  f.lambda_min = lambda_min;
  f.lambda_max = lambda_max;
  f.lipschitz = lipschitz;
  f.values = Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(nt) * nx, value);
  return f;
}

namespace {

// Grid coordinate of z on n points over [lo, lo + (n - 1) h]: lower index and
// fraction, clamped.
std::pair<int, double> grid_position(double z, double lo, double h, int n) {
  if (n == 1) return {0, 0.0};
  const double s = std::clamp((z - lo) / h, 0.0, static_cast<double>(n - 1));
  const int i = std::min(static_cast<int>(s), n - 2);
  return {i, s - i};
}

}  // namespace

double VelocityField::operator()(double t, double x, double y) const {
  const auto [it, ft] = grid_position(t, 0.0, ht(), nt);
  const auto [ix, fx] = grid_position(x, x_lo, hx(), nx);
  const auto [iy, fy] = grid_position(y, 0.0, hy(), ny);
  const int jt = std::min(it + 1, nt - 1), jx = std::min(ix + 1, nx - 1), jy = std::min(iy + 1, ny - 1);
  auto in_y = [&](int a, int b) {
    return (1 - fy) * values(index(a, b, iy)) + fy * values(index(a, b, jy));
  };
  const double lo = (1 - fx) * in_y(it, ix) + fx * in_y(it, jx);
  const double hi = (1 - fx) * in_y(jt, ix) + fx * in_y(jt, jx);
  return (1 - ft) * lo + ft * hi;
}

namespace {

template <typename Visit>
void for_each_neighbour_pair(const VelocityField& f, Visit&& visit) {
  const double lt = f.lipschitz * f.ht(), lx = f.lipschitz * f.hx(), ly = f.lipschitz * f.hy();
  for (int it = 0; it < f.nt; ++it)
    for (int ix = 0; ix < f.nx; ++ix)
      for (int iy = 0; iy < f.ny; ++iy) {
        const auto a = f.index(it, ix, iy);
        if (it + 1 < f.nt) visit(a, f.index(it + 1, ix, iy), lt);
        if (ix + 1 < f.nx) visit(a, f.index(it, ix + 1, iy), lx);
        if (iy + 1 < f.ny) visit(a, f.index(it, ix, iy + 1), ly);
      }
}

void check_shape(const VelocityField& f) {
  if (f.nt < 2 || f.nx < 2 || f.ny < 1 || f.values.size() != static_cast<Eigen::Index>(f.nt) * f.nx * f.ny)
    throw Error(Errc::DimensionMismatch, "velocity grid needs at least 2 x 2 points and matching values");
  if (!(f.horizon > 0) || !(f.x_hi > f.x_lo) || (f.ny > 1 && !(f.y_max > 0)))
    throw Error(Errc::LambdaOutOfSet, "velocity grid has an empty extent");
  if (!(f.lambda_min > 0) || f.lambda_max < f.lambda_min || f.lipschitz < 0)
    throw Error(Errc::LambdaOutOfSet, "need 0 < lambda_min <= lambda_max and L >= 0");
}

}  // namespace

double VelocityField::violation() const {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    worst = std::max({worst, lambda_min - values(i), values(i) - lambda_max});
  for_each_neighbour_pair(*this, [&](Eigen::Index a, Eigen::Index b, double limit) {
    worst = std::max(worst, std::abs(values(a) - values(b)) - limit);
  });
  return worst;
}

void VelocityField::validate(double tol) const {
  check_shape(*this);
  if (!values.allFinite()) throw Error(Errc::LambdaOutOfSet, "velocity values must be finite");
  const double v = violation();
  if (v > tol) throw Error(Errc::LambdaOutOfSet, "velocity field violates its bounds or Lipschitz limit by " + fmt(v));
}

VelocityField project_velocity(VelocityField f, double tol, int max_sweeps) {
  check_shape(f);
  f.values = f.values.max(f.lambda_min).min(f.lambda_max);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for_each_neighbour_pair(f, [&](Eigen::Index a, Eigen::Index b, double limit) {
      const double d = f.values(a) - f.values(b);
      if (std::abs(d) - limit <= tol) return;
      moved = true;
      const double mean = 0.5 * (f.values(a) + f.values(b));
      const double half = d > 0 ? 0.5 * limit : -0.5 * limit;
      f.values(a) = mean + half;
      f.values(b) = mean - half;
    });
    if (!moved) return f;
  }
  throw Error(Errc::ComputeError, "Lipschitz repair did not converge");
}

Eigen::ArrayXd cell_averages(const std::function<double(double)>& f, double lo, double hi, int cells) {
  static const double nodes[] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                 0.9061798459386640};
  static const double weights[] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                   0.4786286704993665, 0.2369268850561891};
  constexpr int sub = 4;
  const double dx = (hi - lo) / cells, h = dx / sub;
  Eigen::ArrayXd out(cells);
  for (int j = 0; j < cells; ++j) {
    double sum = 0.0;
    for (int s = 0; s < sub; ++s) {
      const double mid = lo + j * dx + (s + 0.5) * h;
      for (int g = 0; g < 5; ++g) sum += weights[g] * f(mid + 0.5 * h * nodes[g]) * 0.5 * h;
    }
    out(j) = sum / dx;
  }
  return out;
}

double FreightSolution::mass_residual() const {
  const double dxv = dx(), dtv = dt();
  const double initial = q.row(0).sum() * dxv;
  const double in = q_inflow.sum() * dtv, out = q_outflow.sum() * dtv;
  const double final_mass = q.row(q.rows() - 1).sum() * dxv;
  return (initial + in - out - final_mass) / std::max(1.0, initial + in);
}

namespace {

void check_pair(const FreightPair& p) {
  if (!(p.x_hi > p.x_lo) || !(p.horizon > 0) || p.cells < 2 || p.steps < 1)
    throw Error(Errc::InvalidScenario, "freight road needs a positive length, horizon, cells >= 2 and steps >= 1");
  if (p.q0.size() != 0 && p.q0.size() != p.cells) throw Error(Errc::DimensionMismatch, "q0 must have one value per cell");
  if (p.rho0.size() != 0 && p.rho0.size() != p.cells)
    throw Error(Errc::DimensionMismatch, "rho0 must have one value per cell");
  if ((p.q0.size() && p.q0.minCoeff() < 0) || (p.rho0.size() && p.rho0.minCoeff() < 0))
    throw Error(Errc::InvalidScenario, "initial densities must be nonnegative");
  if ((!p.u1.empty() && p.u1.min_value() < 0) || (!p.u2.empty() && p.u2.min_value() < 0))
    throw Error(Errc::InvalidScenario, "inflows must be nonnegative");
}

double inflow_integral(const PiecewiseSchedule& u, double a, double b) { return u.empty() ? 0.0 : u.integral(a, b); }

// Truck speed c(t, x) = lambda(t, x, W(t, x)) with W read through the window
// from rho rows linearly interpolated in time.
class TruckSpeed {
 public:
  TruckSpeed(const FreightPair& p, const Eigen::ArrayXXd& rho, const VelocityField& lambda)
      : p_(p), lambda_(lambda), coupled_(lambda.depends_on_y() && rho.size() > 0) {
    if (!coupled_) return;
    const double length = p.x_hi - p.x_lo;
    for (Eigen::Index n = 0; n < rho.rows(); ++n) rows_.emplace_back((length * rho.row(n)).transpose().eval());
  }

  double operator()(double t, double x) const {
    if (!coupled_) return lambda_(t, x);
    const double length = p_.x_hi - p_.x_lo;
    auto to_unit = [&](double z) { return std::clamp((z - p_.x_lo) / length, 0.0, 1.0); };
    const double lo = to_unit(p_.b0 + p_.b1 * x), hi = to_unit(p_.d0 + p_.d1 * x);
    const double s = std::clamp(t / p_.dt(), 0.0, static_cast<double>(rows_.size() - 1));
    const auto n = std::min(static_cast<std::size_t>(s), rows_.size() - 2);
    const double f = s - static_cast<double>(n);
    const double W = (1 - f) * rows_[n].integral(lo, hi) + f * rows_[n + 1].integral(lo, hi);
    return lambda_(t, x, std::max(W, 0.0));
  }

 private:
  const FreightPair& p_;
  const VelocityField& lambda_;
  bool coupled_;
  std::vector<RowIntegrator<double>> rows_;
};

// Cumulative truck mass on [x_lo, x] of a row of cell averages.
double row_cumulative(const Eigen::ArrayXd& prefix, const Eigen::ArrayXd& q, double x_lo, double dx, double x) {
  const Eigen::Index N = q.size();
  const double s = std::clamp((x - x_lo) / dx, 0.0, static_cast<double>(N));
  const Eigen::Index j = std::min<Eigen::Index>(static_cast<Eigen::Index>(s), N - 1);
  return prefix(j) + q(j) * (s - static_cast<double>(j)) * dx;
}

void trucks_by_characteristics(const FreightPair& p, const TruckSpeed& c, double lambda_max, FreightSolution& out) {
  const int N = p.cells, M = p.steps;
  const double dx = p.dx(), dt = p.dt();
  const int sub = std::max(1, static_cast<int>(std::ceil(lambda_max * dt / dx)));
  const double h = dt / sub;
  Eigen::ArrayXd prefix(N + 1), cum(N + 1);
  for (int n = 0; n < M; ++n) {
    const double t0 = n * dt, t1 = (n + 1) * dt;
    const Eigen::ArrayXd q = out.q.row(n).transpose();
    prefix(0) = 0.0;
    for (int j = 0; j < N; ++j) prefix(j + 1) = prefix(j) + q(j) * dx;
    const double step_inflow = inflow_integral(p.u2, t0, t1);
    for (int j = 0; j <= N; ++j) {
      double X = p.x_lo + j * dx, tau = t1;
      bool crossed = false;
      for (int s = 0; s < sub && !crossed; ++s) {
        // Backward RK4 for dX/dtau = c(tau, X).
        const double k1 = c(tau, X);
        const double k2 = c(tau - h / 2, X - h / 2 * k1);
        const double k3 = c(tau - h / 2, X - h / 2 * k2);
        const double k4 = c(tau - h, X - h * k3);
        const double next = X - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        if (next < p.x_lo) {
          const double crossing = tau - h * (X - p.x_lo) / (X - next);
          cum(j) = inflow_integral(p.u2, crossing, t1);
          crossed = true;
        }
        X = next;
        tau -= h;
      }
      if (!crossed) cum(j) = row_cumulative(prefix, q, p.x_lo, dx, X) + step_inflow;
    }
    for (int j = 0; j < N; ++j) out.q(n + 1, j) = std::max(cum(j + 1) - cum(j), 0.0) / dx;
    out.q_inflow(n) = step_inflow / dt;
    out.q_outflow(n) = (prefix(N) + step_inflow - out.q.row(n + 1).sum() * dx) / dt;
  }
}

void trucks_by_finite_volume(const FreightPair& p, const TruckSpeed& c, double lambda_max, FreightSolution& out) {
  const int N = p.cells, M = p.steps;
  const double dx = p.dx(), dt = p.dt();
  const int sub = std::max(1, static_cast<int>(std::ceil(lambda_max * dt / (0.9 * dx))));
  const double h = dt / sub;
  Eigen::ArrayXd q = out.q.row(0).transpose(), flux(N + 1);
  for (int n = 0; n < M; ++n) {
    double in = 0.0, outflow = 0.0;
    for (int s = 0; s < sub; ++s) {
      const double ta = n * dt + s * h, tm = ta + h / 2;
      flux(0) = inflow_integral(p.u2, ta, ta + h) / h;
      for (int j = 1; j <= N; ++j) flux(j) = c(tm, p.x_lo + j * dx) * q(j - 1);
      q -= h / dx * (flux.tail(N) - flux.head(N));
      in += flux(0) * h;
      outflow += flux(N) * h;
    }
    out.q.row(n + 1) = q.transpose();
    out.q_inflow(n) = in / dt;
    out.q_outflow(n) = outflow / dt;
  }
}

}  // namespace

Eigen::ArrayXXd solve_background(const FreightPair& p) {
  check_pair(p);
  const double length = p.x_hi - p.x_lo;
  VelocityLaw scaled = p.background_law;
  const auto base = p.background_law.speed;
  scaled.speed = [base, length](double t, double W) { return base(t, W) / length; };
  SolverOptions opt = p.background_solver;
  opt.cells = p.cells;
  const Eigen::ArrayXd rho0 = p.rho0.size() ? Eigen::ArrayXd(length * p.rho0) : Eigen::ArrayXd::Zero(p.cells);
  const PiecewiseSchedule inflow = p.u1.empty() ? PiecewiseSchedule::constant(0.0, 0.0, p.horizon) : p.u1;
  const auto state = solve_link(scaled, NonlocalWindow::whole(), inflow, rho0, p.horizon, p.steps, opt);
  return state.rho / length;
}

FreightSolution solve_trucks(const FreightPair& p, const Eigen::ArrayXXd& rho, const VelocityField& lambda,
                             TruckMethod method) {
  check_pair(p);
  FreightSolution out;
  out.x_lo = p.x_lo;
  out.x_hi = p.x_hi;
  out.horizon = p.horizon;
  out.background_solved = rho.size() > 0;
  out.rho = rho.size() ? rho : Eigen::ArrayXXd::Zero(p.steps + 1, p.cells);
  out.q = Eigen::ArrayXXd::Zero(p.steps + 1, p.cells);
  if (p.q0.size()) out.q.row(0) = p.q0.transpose();
  out.q_inflow = Eigen::ArrayXd::Zero(p.steps);
  out.q_outflow = Eigen::ArrayXd::Zero(p.steps);
  const TruckSpeed c(p, rho, lambda);
  const double lambda_max = lambda.values.maxCoeff();
  if (method == TruckMethod::characteristics)
    trucks_by_characteristics(p, c, lambda_max, out);
  else
    trucks_by_finite_volume(p, c, lambda_max, out);
  return out;
}

FreightSolution solve_freight_pair(const FreightPair& p, const VelocityField& lambda, TruckMethod method) {
  lambda.validate();
  const bool need_rho = p.solve_background || lambda.depends_on_y();
  return solve_trucks(p, need_rho ? solve_background(p) : Eigen::ArrayXXd(), lambda, method);
}

double spread(const Eigen::ArrayXd& q, double x_lo, double x_hi, const Eigen::ArrayXd* rho) {
  const Eigen::Index N = q.size();
  const double dx = (x_hi - x_lo) / static_cast<double>(N);
  double m1 = 0.0, m2 = 0.0;
  for (Eigen::Index j = 0; j < N; ++j) {
    const double a = x_lo + static_cast<double>(j) * dx, b = a + dx;
    const double w = q(j) * (rho ? 1.0 + (*rho)(j) : 1.0);
    m1 += w * (b * b - a * a) / 2;
    m2 += w * (b * b * b - a * a * a) / 3;
  }
  return m2 - m1 * m1;
}

double normalized_variance(const Eigen::ArrayXd& q, double x_lo, double x_hi) {
  const Eigen::Index N = q.size();
  const double dx = (x_hi - x_lo) / static_cast<double>(N);
  double m0 = 0.0, m1 = 0.0, m2 = 0.0;
  for (Eigen::Index j = 0; j < N; ++j) {
    const double a = x_lo + static_cast<double>(j) * dx, b = a + dx;
    m0 += q(j) * dx;
    m1 += q(j) * (b * b - a * a) / 2;
    m2 += q(j) * (b * b * b - a * a * a) / 3;
  }
  if (m0 <= 0.0) return 0.0;
  const double mean = m1 / m0;
  return m2 / m0 - mean * mean;
}

VarianceObjectives variance_objectives(const FreightSolution& s) {
  const Eigen::Index rows = s.q.rows();
  Eigen::ArrayXd j1(rows), j2(rows);
  for (Eigen::Index n = 0; n < rows; ++n) {
    const Eigen::ArrayXd q = s.q.row(n).transpose();
    const Eigen::ArrayXd rho = s.rho.row(n).transpose();
    j1(n) = spread(q, s.x_lo, s.x_hi);
    j2(n) = spread(q, s.x_lo, s.x_hi, &rho);
  }
  return {trapezoid(j1, s.dt()), trapezoid(j2, s.dt())};
}

PlatoonResult optimize_velocity(const FreightPair& pair, const VelocityField& initial, int budget,
                                const PlatoonOptions& options) {
  if (budget < 1) throw Error(Errc::InvalidScenario, "budget must allow at least one solve");
  const bool need_rho = initial.depends_on_y() || options.objective == PlatoonObjective::J2;
  const Eigen::ArrayXXd rho = need_rho ? solve_background(pair) : Eigen::ArrayXXd();
  auto objective = [&](const VelocityField& f) {
    const auto v = variance_objectives(solve_trucks(pair, rho, f, options.method));
    return options.objective == PlatoonObjective::J1 ? v.J1 : v.J2;
  };

  PlatoonResult result;
  VelocityField x = project_velocity(initial);
  double J = objective(x);
  result.simulations = 1;
  result.trace.push_back({1, J});
  const Eigen::Index dim = x.values.size();
  double step = options.initial_step;
  Eigen::ArrayXd grad(dim);
  const int threads = std::max(1, options.threads);

  while (step >= options.min_step) {
    if (budget - result.simulations < 2 * dim + 1) {
      result.budget_exhausted = true;
      break;
    }
    auto probe = [&](int first) {
      VelocityField f = x;
      for (Eigen::Index i = first; i < dim; i += threads) {
        const double v = f.values(i);
        f.values(i) = v + options.fd_step;
        const double plus = objective(f);
        f.values(i) = v - options.fd_step;
        const double minus = objective(f);
        f.values(i) = v;
        grad(i) = (plus - minus) / (2 * options.fd_step);
      }
    };
    if (threads == 1) {
      probe(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < threads; ++w) pool.emplace_back(probe, w);
      for (auto& th : pool) th.join();
    }
    result.simulations += static_cast<int>(2 * dim);
    const double gmax = grad.abs().maxCoeff();
    if (gmax == 0.0) break;

    bool accepted = false;
    while (step >= options.min_step && result.simulations < budget) {
      VelocityField trial = x;
      trial.values -= step / gmax * grad;
      trial = project_velocity(trial);
      const double j_trial = objective(trial);
      ++result.simulations;
      if (j_trial < J) {
        x = trial;
        J = j_trial;
        step = std::min(2 * step, options.max_step);
        result.trace.push_back({result.simulations, J});
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted && step >= options.min_step) {
      result.budget_exhausted = true;
      break;
    }
  }
  result.best = x;
  result.objective = J;
  return result;
}

void write_velocity_csv(std::ostream& os, const VelocityField& lambda, const FreightSolution& grid, int time_stride) {
  os << "t,x,lambda\n";
  const double dx = grid.dx(), dt = grid.dt();
  for (int n = 0; n <= grid.steps(); n += std::max(1, time_stride))
    for (int j = 0; j < grid.cells(); ++j) {
      const double x = grid.x_lo + (j + 0.5) * dx;
      os << fmt(n * dt) << ',' << fmt(x) << ',' << fmt(lambda(n * dt, x)) << '\n';
    }
}

void write_truck_csv(std::ostream& os, const FreightSolution& s, int time_stride) {
  os << "t,x,q\n";
  const double dx = s.dx(), dt = s.dt();
  for (int n = 0; n <= s.steps(); n += std::max(1, time_stride))
    for (int j = 0; j < s.cells(); ++j) os << fmt(n * dt) << ',' << fmt(s.x_lo + (j + 0.5) * dx) << ',' << fmt(s.q(n, j)) << '\n';
}

}  // namespace mobility
