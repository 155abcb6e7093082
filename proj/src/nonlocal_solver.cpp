#include "mobility/nonlocal_solver.hpp"

#include "mobility/csv.hpp"
#include "mobility/error.hpp"
#include "mobility/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>

namespace mobility {

VelocityLaw constant_speed(double c) {
  return {[c](double, double) { return c; }, true, "constant " + fmt(c)};
}

VelocityLaw inverse_speed(double vmax, double alpha) {
  return {[vmax, alpha](double, double W) { return vmax / (1.0 + alpha * W); }, alpha >= 0.0,
          fmt(vmax) + "/(1+" + fmt(alpha) + "W)"};
}

void check_velocity(const VelocityLaw& law, double horizon, double w_max, double floor) {
  if (!law.speed) throw Error(Errc::InvalidVelocity, "velocity law is empty");
  constexpr int samples = 33;
  for (int i = 0; i < samples; ++i) {
    const double t = horizon * i / (samples - 1);
    double previous = 0.0;
    for (int j = 0; j < samples; ++j) {
      const double W = w_max * j / (samples - 1);
      const double v = law(t, W);
      if (!std::isfinite(v) || v < floor)
        throw Error(Errc::InvalidVelocity, "speed " + fmt(v) + " at t=" + fmt(t) + ", W=" + fmt(W) +
                                               " is not positive");
      if (law.congestion_type && j > 0 && v > previous * (1 + 1e-12))
        throw Error(Errc::InvalidVelocity, "congestion-type speed increases in W at t=" + fmt(t));
      previous = v;
    }
  }
}

NonlocalWindow NonlocalWindow::affine(double b0, double b1, double d0, double d1) {
  NonlocalWindow w{b0, b1, d0, d1};
  for (double x : {0.0, 1.0}) {
    const double b = w.lower(x), d = w.upper(x);
    if (!(b >= 0.0 && d <= 1.0 && b <= d))
      throw Error(Errc::InvalidScenario, "nonlocal window must satisfy 0 <= b(x) <= d(x) <= 1");
  }
  return w;
}

double nonlocal_term(const Eigen::ArrayXd& rho_row, const NonlocalWindow& window, double x) {
  if (window.whole_link()) return rho_row.sum() / static_cast<double>(rho_row.size());
  return RowIntegrator<double>(rho_row).integral(window.lower(x), window.upper(x));
}

namespace {

// Cumulative mass of the piecewise-constant profile given by cell averages.
// Transporting this exactly keeps jumps sharp across window restarts.
class CellCumulative {
 public:
  explicit CellCumulative(const Eigen::ArrayXd& cells) : values_(cells), prefix_(cells.size() + 1) {
    const auto N = cells.size();
    prefix_(0) = 0.0;
    for (Eigen::Index j = 0; j < N; ++j) prefix_(j + 1) = prefix_(j) + cells(j) / static_cast<double>(N);
  }

  double cumulative(double y) const {
    const auto N = values_.size();
    y = std::clamp(y, 0.0, 1.0);
    const double s = y * static_cast<double>(N);
    const Eigen::Index j = std::min<Eigen::Index>(static_cast<Eigen::Index>(s), N - 1);
    return prefix_(j) + values_(j) * (s - static_cast<double>(j)) / static_cast<double>(N);
  }
  double total() const { return prefix_(prefix_.size() - 1); }

 private:
  Eigen::ArrayXd values_;
  Eigen::ArrayXd prefix_;
};

// Position of z on nondecreasing knots xi[0..count): knot index n and the
// fraction towards n + 1.
std::pair<std::size_t, double> locate(const std::vector<double>& xi, std::size_t count, double z) {
  if (z <= xi[0]) return {0, 0.0};
  if (z >= xi[count - 1]) return {count - 1, 0.0};
  auto it = std::upper_bound(xi.begin(), xi.begin() + static_cast<std::ptrdiff_t>(count), z);
  const std::size_t n = static_cast<std::size_t>(it - xi.begin()) - 1;
  const double span = xi[n + 1] - xi[n];
  return {n, span > 0.0 ? (z - xi[n]) / span : 0.0};
}

double at(const std::vector<double>& values, std::pair<std::size_t, double> pos) {
  const auto [n, f] = pos;
  return f == 0.0 ? values[n] : values[n] + f * (values[n + 1] - values[n]);
}

// Mass still on the link when the inlet characteristic is at xi_now, given
// cumulative inflow U_now since the window start: initial mass behind the
// exit plus inflow that has not yet reached x = 1.
double mass_on_link(double xi_now, double U_now, const CellCumulative& initial,
                    const std::vector<double>& xi, const std::vector<double>& U, std::size_t count) {
  if (xi_now <= 1.0) return U_now + initial.cumulative(1.0 - xi_now);
  return U_now - at(U, locate(xi, count, xi_now - 1.0));
}

// Cumulative mass on [0, x].
double mass_below(double x, double xi_now, double U_now, const CellCumulative& initial,
                  const std::vector<double>& xi, const std::vector<double>& U, std::size_t count) {
  if (x >= xi_now) return U_now + initial.cumulative(x - xi_now);
  return U_now - at(U, locate(xi, count, xi_now - x));
}

// Exact transport along the common characteristic of all commodities, from
// a window start t0 where the state is given as cell averages. Everything is
// expressed through cumulative masses, so conservation holds to rounding.
class CharacteristicWindow {
 public:
  CharacteristicWindow(const std::vector<Eigen::ArrayXd>& rho, double t0, const VelocityLaw& law)
      : law_(&law) {
    Eigen::ArrayXd total = Eigen::ArrayXd::Zero(rho.front().size());
    for (const auto& r : rho) {
      initial_.emplace_back(r);
      total += r;
      U_.push_back({0.0});
    }
    initial_sum_.emplace(total);
    t_ = {t0};
    xi_ = {0.0};
    Usum_ = {0.0};
    lambda_ = {law(t0, initial_sum_->total())};
  }

  double start() const { return t_.front(); }
  double elapsed() const { return t_.back() - t_.front(); }
  double speed() const { return lambda_.back(); }

  Eigen::ArrayXd advance(double dt, const Eigen::ArrayXd& inflow, double tol, int cap) {
    const std::size_t K = U_.size();
    const std::size_t count = xi_.size();
    const double t_next = t_.back() + dt;
    const double xi_n = xi_.back();
    const double lam_n = lambda_.back();
    const double usum_next = Usum_.back() + inflow.sum() * dt;

    double xi = xi_n + dt * lam_n;
    for (int it = 0;; ++it) {
      if (it >= cap)
        throw Error(Errc::FixedPointDiverged, "characteristic step at t=" + fmt(t_next) +
                                                  " did not converge; subdivide the time window");
      const double W = mass_on_link(xi, usum_next, *initial_sum_, xi_, Usum_, count);
      const double next = xi_n + dt / 2 * (lam_n + (*law_)(t_next, W));
      const double change = std::abs(next - xi);
      xi = next;
      if (change <= tol) break;
    }

    Eigen::ArrayXd before(static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k)
      before(static_cast<Eigen::Index>(k)) = mass_on_link(xi_n, U_[k].back(), initial_[k], xi_, U_[k], count);

    t_.push_back(t_next);
    xi_.push_back(xi);
    Usum_.push_back(usum_next);
    for (std::size_t k = 0; k < K; ++k) U_[k].push_back(U_[k].back() + inflow(static_cast<Eigen::Index>(k)) * dt);
    lambda_.push_back((*law_)(t_next, mass_on_link(xi, usum_next, *initial_sum_, xi_, Usum_, count + 1)));

    Eigen::ArrayXd outflow(static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      const double after = mass_on_link(xi, U_[k].back(), initial_[k], xi_, U_[k], count + 1);
      // Rounding can leave -1e-17 when nothing leaves; downstream links
      // require nonnegative inflow.
      outflow(static_cast<Eigen::Index>(k)) =
          std::max(0.0, before(static_cast<Eigen::Index>(k)) + inflow(static_cast<Eigen::Index>(k)) * dt - after);
    }
    return outflow;
  }

  void cell_averages(std::vector<Eigen::ArrayXd>& rho) const {
    const std::size_t count = xi_.size();
    for (std::size_t k = 0; k < rho.size(); ++k) {
      auto& r = rho[k];
      const Eigen::Index N = r.size();
      double lower = mass_below(0.0, xi_.back(), U_[k].back(), initial_[k], xi_, U_[k], count);
      for (Eigen::Index j = 0; j < N; ++j) {
        const double x = static_cast<double>(j + 1) / static_cast<double>(N);
        const double upper = mass_below(x, xi_.back(), U_[k].back(), initial_[k], xi_, U_[k], count);
        r(j) = (upper - lower) * static_cast<double>(N);
        lower = upper;
      }
    }
  }

 private:
  const VelocityLaw* law_;
  std::vector<CellCumulative> initial_;
  std::optional<CellCumulative> initial_sum_;
  std::vector<double> t_, xi_, lambda_, Usum_;
  std::vector<std::vector<double>> U_;
};

}  // namespace

struct LinkStepper::Impl {
  VelocityLaw law;
  NonlocalWindow window;
  SolverOptions options;
  LinkMethod method;
  double dt;
  double t = 0.0;
  std::vector<Eigen::ArrayXd> rho;
  std::optional<CharacteristicWindow> chars;

  Eigen::ArrayXd aggregate() const {
    Eigen::ArrayXd total = Eigen::ArrayXd::Zero(rho.front().size());
    for (const auto& r : rho) total += r;
    return total;
  }

  int substeps_for(double lambda_max, double limit) const {
    int substeps = 1;
    for (int halvings = 0; lambda_max * dt / substeps > limit; ++halvings) {
      if (halvings == options.max_halvings)
        throw Error(Errc::CflViolated, "speed " + fmt(lambda_max) + " needs a smaller time step than " +
                                           fmt(dt / substeps) + " at t=" + fmt(t));
      substeps *= 2;
    }
    return substeps;
  }

  Eigen::ArrayXd step_characteristics(const Eigen::ArrayXd& inflow) {
    if (!chars) chars.emplace(rho, t, law);
    // The implicit step only needs the characteristic to advance less than
    // one link length per step.
    const int substeps = substeps_for(chars->speed(), 0.9);
    const double h = dt / substeps;
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(inflow.size());
    for (int s = 0; s < substeps; ++s) {
      if (chars->elapsed() >= options.window_length * (1 - 1e-12)) {
        chars->cell_averages(rho);
        chars.emplace(rho, t, law);
      }
      out += chars->advance(h, inflow, options.picard_tol, options.picard_cap);
      t += h;
    }
    chars->cell_averages(rho);
    return out / dt;
  }

  Eigen::ArrayXd interface_speeds(const Eigen::ArrayXd& total) const {
    const Eigen::Index N = total.size();
    Eigen::ArrayXd speeds(N + 1);
    if (window.whole_link()) {
      speeds.setConstant(law(t, total.sum() / static_cast<double>(N)));
      return speeds;
    }
    RowIntegrator<double> integ(total);
    for (Eigen::Index j = 0; j <= N; ++j) {
      const double x = static_cast<double>(j) / static_cast<double>(N);
      speeds(j) = law(t, integ.integral(window.lower(x), window.upper(x)));
    }
    return speeds;
  }

  Eigen::ArrayXd step_finite_volume(const Eigen::ArrayXd& inflow) {
    const Eigen::Index N = rho.front().size();
    const double dx = 1.0 / static_cast<double>(N);
    Eigen::ArrayXd speeds = interface_speeds(aggregate());
    const int substeps = substeps_for(speeds.maxCoeff(), options.cfl * dx);
    const double h = dt / substeps;
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(inflow.size());
    Eigen::ArrayXd flux(N + 1);
    for (int s = 0; s < substeps; ++s) {
      if (s > 0) speeds = interface_speeds(aggregate());
      if (speeds.maxCoeff() * h > dx)
        throw Error(Errc::CflViolated, "speed grew beyond the stable step at t=" + fmt(t));
      for (std::size_t k = 0; k < rho.size(); ++k) {
        auto& r = rho[k];
        flux(0) = inflow(static_cast<Eigen::Index>(k));
        flux.tail(N) = speeds.tail(N) * r;
        r += (h / dx) * (flux.head(N) - flux.tail(N));
        out(static_cast<Eigen::Index>(k)) += flux(N) * h;
      }
      t += h;
    }
    return out / dt;
  }
};

LinkStepper::LinkStepper(VelocityLaw law, NonlocalWindow window, const SolverOptions& options,
                         const std::vector<Eigen::ArrayXd>& rho0, double dt)
    : impl_(std::make_unique<Impl>()) {
  if (rho0.empty() || rho0.front().size() == 0)
    throw Error(Errc::InvalidScenario, "link needs at least one commodity and one cell");
  for (const auto& r : rho0) {
    if (r.size() != rho0.front().size())
      throw Error(Errc::DimensionMismatch, "commodity densities differ in cell count");
    if (!r.allFinite() || (r < 0.0).any())
      throw Error(Errc::InvalidScenario, "initial density must be finite and nonnegative");
  }
  if (!(dt > 0.0)) throw Error(Errc::InvalidScenario, "time step must be positive");
  impl_->law = std::move(law);
  impl_->window = window;
  impl_->options = options;
  impl_->dt = dt;
  impl_->rho = rho0;
  impl_->method = options.method;
  if (impl_->method == LinkMethod::automatic)
    impl_->method = window.whole_link() ? LinkMethod::characteristics : LinkMethod::finite_volume;
  if (impl_->method == LinkMethod::characteristics && !window.whole_link())
    throw Error(Errc::InvalidScenario, "characteristics method needs the whole-link window");
}

LinkStepper::~LinkStepper() = default;
LinkStepper::LinkStepper(LinkStepper&&) noexcept = default;
LinkStepper& LinkStepper::operator=(LinkStepper&&) noexcept = default;

Eigen::ArrayXd LinkStepper::step(const Eigen::ArrayXd& inflow) {
  if (inflow.size() != commodities())
    throw Error(Errc::DimensionMismatch, "inflow has " + std::to_string(inflow.size()) + " entries for " +
                                             std::to_string(commodities()) + " commodities");
  if (!inflow.allFinite() || (inflow < 0.0).any())
    throw Error(Errc::InvalidScenario, "inflow must be finite and nonnegative at t=" + fmt(impl_->t));
  const double t_end = impl_->t + impl_->dt;
  Eigen::ArrayXd out = impl_->method == LinkMethod::characteristics ? impl_->step_characteristics(inflow)
                                                                     : impl_->step_finite_volume(inflow);
  impl_->t = t_end;
  return out;
}

double LinkStepper::time() const noexcept { return impl_->t; }
int LinkStepper::commodities() const noexcept { return static_cast<int>(impl_->rho.size()); }
const Eigen::ArrayXd& LinkStepper::density(int k) const { return impl_->rho.at(static_cast<std::size_t>(k)); }
Eigen::ArrayXd LinkStepper::aggregate() const { return impl_->aggregate(); }
LinkMethod LinkStepper::method() const noexcept { return impl_->method; }

LinkState solve_link(const VelocityLaw& law, const NonlocalWindow& window, const Eigen::ArrayXd& inflow,
                     const Eigen::ArrayXd& rho0, double horizon, const SolverOptions& options) {
  const int steps = static_cast<int>(inflow.size());
  if (steps < 1 || !(horizon > 0.0)) throw Error(Errc::InvalidScenario, "need a positive horizon and steps");
  const double dx = 1.0 / static_cast<double>(rho0.size());
  check_velocity(law, horizon, rho0.sum() * dx + inflow.sum() * horizon / steps);
  SolverOptions opt = options;
  opt.window_length = std::min(opt.window_length, horizon);
  LinkStepper stepper(law, window, opt, {rho0}, horizon / steps);

  LinkState state;
  state.horizon = horizon;
  state.law = law;
  state.window = window;
  state.u = inflow;
  state.y.resize(steps);
  state.rho.resize(steps + 1, rho0.size());
  state.mass.resize(steps + 1);
  state.rho.row(0) = rho0.transpose();
  state.mass(0) = rho0.sum() * dx;
  Eigen::ArrayXd in(1);
  for (int n = 0; n < steps; ++n) {
    in(0) = inflow(n);
    state.y(n) = stepper.step(in)(0);
    state.rho.row(n + 1) = stepper.density(0).transpose();
    state.mass(n + 1) = stepper.density(0).sum() * dx;
  }
  return state;
}

LinkState solve_link(const VelocityLaw& law, const NonlocalWindow& window, const PiecewiseSchedule& inflow,
                     const Eigen::ArrayXd& rho0, double horizon, int steps, const SolverOptions& options) {
  return solve_link(law, window, inflow.step_averages(horizon, steps), rho0, horizon, options);
}

CharacteristicTrajectory solve_characteristic(const VelocityLaw& law, const Eigen::ArrayXd& inflow,
                                              const Eigen::ArrayXd& rho0, double horizon, double tol,
                                              int cap) {
  const auto steps = static_cast<std::size_t>(inflow.size());
  if (steps < 1 || !(horizon > 0.0)) throw Error(Errc::InvalidScenario, "need a positive horizon and steps");
  const double dt = horizon / static_cast<double>(steps);
  const CellCumulative initial(rho0);
  check_velocity(law, horizon, initial.total() + inflow.sum() * dt);

  std::vector<double> U(steps + 1, 0.0), xi(steps + 1, 0.0), next(steps + 1, 0.0), lambda(steps + 1);
  for (std::size_t n = 0; n < steps; ++n) U[n + 1] = U[n] + inflow(static_cast<Eigen::Index>(n)) * dt;

  CharacteristicTrajectory out;
  for (int it = 1;; ++it) {
    if (it > cap)
      throw Error(Errc::FixedPointDiverged, "Picard iteration did not converge within " + std::to_string(cap) +
                                                " sweeps; subdivide the time window");
    for (std::size_t n = 0; n <= steps; ++n)
      lambda[n] = law(static_cast<double>(n) * dt, mass_on_link(xi[n], U[n], initial, xi, U, n + 1));
    double change = 0.0;
    for (std::size_t n = 1; n <= steps; ++n) {
      next[n] = next[n - 1] + dt / 2 * (lambda[n - 1] + lambda[n]);
      change = std::max(change, std::abs(next[n] - xi[n]));
    }
    xi.swap(next);
    if (change <= tol) {
      out.iterations = it;
      break;
    }
  }
  out.t = Eigen::ArrayXd::LinSpaced(static_cast<Eigen::Index>(steps + 1), 0.0, horizon);
  out.xi = Eigen::Map<const Eigen::ArrayXd>(xi.data(), static_cast<Eigen::Index>(steps + 1));
  return out;
}

double outflux(const LinkState& state, double t) {
  const double s = std::clamp(t / state.dt(), 0.0, static_cast<double>(state.steps()));
  const int n = std::min(static_cast<int>(s), state.steps() - 1);
  const double f = s - n;
  auto at_row = [&](int row) {
    const Eigen::ArrayXd r = state.rho.row(row).transpose();
    return state.law(row * state.dt(), nonlocal_term(r, state.window, 1.0)) * r(r.size() - 1);
  };
  const double y0 = at_row(n);
  return f == 0.0 ? y0 : (1 - f) * y0 + f * at_row(n + 1);
}

int steps_for_cfl(double horizon, int cells, double lambda_max, double cfl) {
  return std::max(1, static_cast<int>(std::ceil(horizon * lambda_max * cells / cfl - 1e-9)));
}

void write_density_csv(std::ostream& os, const LinkState& state, int time_stride) {
  os << "t,x,rho\n";
  const double dx = state.dx();
  for (int n = 0; n <= state.steps(); ++n) {
    if (n % time_stride != 0 && n != state.steps()) continue;
    for (int j = 0; j < state.cells(); ++j)
      os << fmt(n * state.dt()) << ',' << fmt((j + 0.5) * dx) << ',' << fmt(state.rho(n, j)) << '\n';
  }
}

void write_flux_csv(std::ostream& os, const LinkState& state) {
  os << "t,u,y\n";
  for (int n = 0; n < state.steps(); ++n)
    os << fmt(n * state.dt()) << ',' << fmt(state.u(n)) << ',' << fmt(state.y(n)) << '\n';
}

}  // namespace mobility
