#include "mobility/error.hpp"
#include "mobility/rng.hpp"
#include "mobility/social_optimum.hpp"

#include <doctest.h>

#include <cmath>

using namespace mobility;

namespace {

NetworkScenario single_link(double horizon, int cells) {
  NetworkScenario sc;
  sc.net = RoadNetwork({0, 1}, {{0, 1}});
  sc.commodities = {{UserClass::non_routed, 1}};
  sc.models = {{constant_speed(1.0), NonlocalWindow::whole()}};
  sc.horizon = horizon;
  sc.solver.cells = cells;
  sc.steps = steps_for_cfl(horizon, cells, 1.0);
  return sc;
}

// Feeder 0 -> 1, then two parallel links 1 -> 2 with different free speeds.
NetworkScenario fast_slow() {
  NetworkScenario sc;
  sc.net = RoadNetwork({0, 1, 2}, {{0, 1}, {1, 2}, {1, 2}});
  sc.commodities = {{UserClass::non_routed, 2}};
  sc.models = {{constant_speed(2.0), NonlocalWindow::whole()},
               {inverse_speed(2.0, 2.0), NonlocalWindow::whole()},
               {inverse_speed(1.0, 0.5), NonlocalWindow::whole()}};
  sc.horizon = 4;
  sc.solver.cells = 20;
  sc.steps = steps_for_cfl(4, 20, 2.0);
  return sc;
}

ControlParameterization one_split(double horizon, double theta_fast) {
  ControlParameterization c;
  c.knots = {0.0, horizon};
  c.splits.push_back({1, 0, Eigen::ArrayXXd(1, 2)});
  c.splits[0].values << theta_fast, 1.0 - theta_fast;
  c.sources.push_back({0, 0, 0, Eigen::ArrayXd::Constant(1, 0.0)});
  return c;
}

DemandSpec fast_slow_demand() {
  DemandSpec d;
  d.demand[{0, 0, 0}] = 2.0;
  return d;
}

// Projection by bisection on the shift tau with sum(max(v - tau, 0)) = 1.
Eigen::ArrayXd simplex_by_bisection(const Eigen::ArrayXd& v, const std::vector<bool>& allowed) {
  double lo = -2.0 - v.abs().maxCoeff(), hi = v.abs().maxCoeff() + 2.0;
  auto mass = [&](double tau) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (allowed[static_cast<std::size_t>(i)]) s += std::max(v(i) - tau, 0.0);
    return s;
  };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) > 1.0 ? lo : hi) = mid;
  }
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (allowed[static_cast<std::size_t>(i)]) out(i) = std::max(v(i) - lo, 0.0);
  return out;
}

}  // namespace

TEST_CASE("backlog of a state with no demand and no traffic is zero") {
  const auto st = simulate(single_link(2, 20));
  CHECK(backlog_objective(st, {}) == 0.0);
}

TEST_CASE("backlog with demand that never arrives is D^2 T") {
  const auto st = simulate(single_link(2, 20));
  DemandSpec d;
  d.demand[{0, 0, 0}] = 1.5;
  CHECK(backlog_objective(st, d) == doctest::Approx(1.5 * 1.5 * 2).epsilon(1e-12));
}

TEST_CASE("backlog of one vehicle crossing a unit-speed link") {
  auto sc = single_link(2, 100);
  const double dt = sc.horizon / sc.steps;
  sc.sources.set(0, 0, 0, PiecewiseSchedule::constant(1.0 / dt, 0, dt));
  DemandSpec d;
  d.demand[{0, 0, 0}] = 1.0;
  // Everything waits one time unit, then arrives within about one step.
  CHECK(std::abs(backlog_objective(simulate(sc), d) - 1.0) <= 2 * dt);
}

TEST_CASE("demand projection") {
  const Eigen::ArrayXd len = Eigen::ArrayXd::Ones(3);
  Eigen::ArrayXd r(3);
  r << 1, 1, 1;
  CHECK((project_demand(r, len, 6.0) - 2.0).abs().maxCoeff() <= 1e-15);
  CHECK((project_demand(Eigen::ArrayXd::Zero(3), len, 6.0) - 2.0).abs().maxCoeff() <= 1e-15);
  r << -1, 1, 3;
  const auto p = project_demand(r, len, 2.0);
  CHECK(p(0) == 0.0);
  CHECK(p(1) == doctest::Approx(0.5));
  CHECK(p(2) == doctest::Approx(1.5));
  Eigen::ArrayXd uneven(2);
  uneven << 0.5, 1.5;
  CHECK((project_demand(Eigen::ArrayXd::Zero(2), uneven, 4.0) - 2.0).abs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(project_demand(r, uneven, 1.0), Error);
}

TEST_CASE("simplex projection matches a bisection oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const int m = 1 + static_cast<int>(rng.index(6));
    Eigen::ArrayXd v(m);
    std::vector<bool> allowed(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      v(i) = rng.uniform(-2.0, 2.0);
      allowed[static_cast<std::size_t>(i)] = rng.uniform() < 0.7;
    }
    allowed[rng.index(static_cast<std::size_t>(m))] = true;
    const auto p = project_simplex(v, allowed);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    CHECK(p.minCoeff() >= 0.0);
    for (int i = 0; i < m; ++i)
      if (!allowed[static_cast<std::size_t>(i)]) CHECK(p(i) == 0.0);
    CHECK((p - simplex_by_bisection(v, allowed)).abs().maxCoeff() <= 1e-9);
    CHECK((project_simplex(p, allowed) - p).abs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("control flatten round trip and projection feasibility") {
  auto c = one_split(4, 0.9);
  c.knots = {0, 1, 4};
  c.splits[0].values = Eigen::ArrayXXd(2, 2);
  c.splits[0].values << 2, -1, 0.3, 0.3;
  c.sources[0].rates = Eigen::ArrayXd::Constant(2, -1.0);
  const auto x = c.flatten();
  CHECK(x.size() == 6);
  auto copy = c;
  copy.unflatten(x);
  CHECK((copy.flatten() - x).abs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(copy.unflatten(Eigen::ArrayXd::Zero(5)), Error);

  const auto sc = fast_slow();
  c.project(sc, fast_slow_demand());
  for (int p = 0; p < 2; ++p) {
    CHECK(std::abs(c.splits[0].values.row(p).sum() - 1.0) <= 1e-12);
    CHECK(c.splits[0].values.row(p).minCoeff() >= 0.0);
  }
  CHECK(std::abs((c.sources[0].rates * c.interval_lengths()).sum() - 2.0) <= 1e-12);

  auto bad = c;
  bad.knots = {0, 2};
  CHECK_THROWS_AS(bad.project(sc, fast_slow_demand()), Error);
}

TEST_CASE("optimizer shifts traffic to the faster route") {
  const auto sc = fast_slow();
  const auto demand = fast_slow_demand();
  auto start = one_split(sc.horizon, 0.5);
  start.project(sc, demand);
  const double j_half = evaluate_controls(sc, demand, start);
  const auto res = optimize_social(sc, demand, start, 400);
  CHECK(res.objective < j_half);
  CHECK(res.best.splits[0].values(0, 0) > 0.5);
  CHECK(res.local_minimum_only);
  CHECK(res.simulations <= 400);
  for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i].objective <= res.trace[i - 1].objective);
  CHECK(std::abs(res.best.splits[0].values.row(0).sum() - 1.0) <= 1e-9);
  CHECK(std::abs((res.best.sources[0].rates * res.best.interval_lengths()).sum() - 2.0) <= 1e-9);
  CHECK(evaluate_controls(sc, demand, res.best) == doctest::Approx(res.objective).epsilon(1e-12));
}

TEST_CASE("optimizer matches a grid search on one split") {
  const auto sc = fast_slow();
  const auto demand = fast_slow_demand();
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(evaluate_controls(sc, demand, [&] {
    auto c = one_split(sc.horizon, i / 100.0);
    c.project(sc, demand);
    return c;
  }()));
  double modulus = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) modulus = std::max(modulus, std::abs(grid[i] - grid[i - 1]));
  const double best = *std::min_element(grid.begin(), grid.end());
  auto start = one_split(sc.horizon, 0.5);
  const auto res = optimize_social(sc, demand, start, 400);
  MESSAGE("grid min " << best << " optimizer " << res.objective << " modulus " << modulus);
  CHECK(std::abs(res.objective - best) <= modulus);
}

TEST_CASE("optimizer reports budget exhaustion") {
  const auto sc = fast_slow();
  const auto res = optimize_social(sc, fast_slow_demand(), one_split(sc.horizon, 0.5), 5);
  CHECK(res.budget_exhausted);
  CHECK(res.simulations <= 5);
  CHECK_THROWS_AS(optimize_social(sc, fast_slow_demand(), one_split(sc.horizon, 0.5), 0), Error);
}

TEST_CASE("threaded probes give the same result") {
  const auto sc = fast_slow();
  SocialOptions opt;
  opt.threads = 2;
  const auto a = optimize_social(sc, fast_slow_demand(), one_split(sc.horizon, 0.5), 60);
  const auto b = optimize_social(sc, fast_slow_demand(), one_split(sc.horizon, 0.5), 60, opt);
  CHECK(a.objective == b.objective);
  CHECK(a.simulations == b.simulations);
}
