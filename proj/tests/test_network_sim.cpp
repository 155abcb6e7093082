#include "mobility/error.hpp"
#include "mobility/network_sim.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace mobility;
using testing_support::indicator_cells;

namespace {

NetworkScenario single_link(const VelocityLaw& law, double horizon, int steps, int cells) {
  NetworkScenario sc;
  sc.net = RoadNetwork({0, 1}, {{0, 1}});
  sc.commodities = {{UserClass::non_routed, 1}};
  sc.models = {{law, NonlocalWindow::whole()}};
  sc.horizon = horizon;
  sc.steps = steps;
  sc.solver.cells = cells;
  return sc;
}

NetworkScenario diamond(double horizon) {
  NetworkScenario sc;
  sc.net = RoadNetwork({1, 2, 3, 4}, {{1, 2}, {1, 3}, {2, 4}, {3, 4}});
  sc.commodities = {{UserClass::non_routed, 4}};
  sc.models = {{inverse_speed(1.0, 1.0), NonlocalWindow::whole()}};
  sc.splits.set(1, 0, 0, PiecewiseSchedule::constant(0.5, 0, horizon));
  sc.splits.set(1, 1, 0, PiecewiseSchedule::constant(0.5, 0, horizon));
  sc.sources.set(1, 0, 0, PiecewiseSchedule::constant(0.4, 0, horizon / 2));
  sc.sources.set(1, 1, 0, PiecewiseSchedule::constant(0.4, 0, horizon / 2));
  sc.horizon = horizon;
  sc.solver.cells = 100;
  sc.steps = steps_for_cfl(horizon, 100, 1.0);
  return sc;
}

}  // namespace

TEST_CASE("two links in series reach the inflow rate downstream") {
  NetworkScenario sc;
  sc.net = RoadNetwork({0, 1, 2}, {{0, 1}, {1, 2}});
  sc.commodities = {{UserClass::non_routed, 2}};
  sc.models = {{constant_speed(1.0), NonlocalWindow::whole()}};
  sc.sources.set(0, 0, 0, PiecewiseSchedule::constant(1.0, 0, 4));
  sc.horizon = 4;
  sc.steps = 400;
  sc.solver.cells = 100;
  const auto st = simulate(sc);
  for (int n = 0; n < sc.steps; ++n) {
    const double t = n * st.dt();
    if (t >= 2.0 + 1e-9) CHECK(st.links[1].outflow(n, 0) == doctest::Approx(1.0).epsilon(1e-9));
    if (t + st.dt() <= 2.0 - 1e-9) CHECK(std::abs(st.links[1].outflow(n, 0)) < 1e-9);
  }
  const auto mb = mass_balance(st);
  CHECK(std::abs(mb[0].relative_residual()) < 1e-12);
  CHECK(mb[0].injected == doctest::Approx(4.0));
  CHECK(mb[0].exited == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("symmetric diamond gives identical branches") {
  const auto st = simulate(diamond(3.0));
  CHECK((st.links[0].aggregate == st.links[1].aggregate).all());
  CHECK((st.links[2].aggregate == st.links[3].aggregate).all());
  CHECK(st.links[2].aggregate.maxCoeff() > 0.1);
  for (auto& m : mass_balance(st)) CHECK(std::abs(m.relative_residual()) < 1e-12);
  const auto times = instantaneous_path_times(st, 1.3, 1, 4);
  REQUIRE(times.size() == 2);
  CHECK(times[0].time == times[1].time);
}

TEST_CASE("no sources and no initial data leave everything zero") {
  auto sc = diamond(2.0);
  sc.sources = SourceSchedule{};
  const auto st = simulate(sc);
  for (const auto& rec : st.links) {
    CHECK((rec.aggregate == 0.0).all());
    CHECK((rec.outflow == 0.0).all());
  }
  CHECK((st.arrivals == 0.0).all());
}

TEST_CASE("travel times on simple configurations") {
  {
    auto sc = single_link(constant_speed(1.0), 3.0, 300, 50);
    const auto st = simulate(sc);
    for (double t0 : {0.0, 0.37, 1.5}) CHECK(travel_time(st, {0}, t0) - t0 == doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    NetworkScenario sc;
    sc.net = RoadNetwork({0, 1, 2}, {{0, 1}, {1, 2}});
    sc.commodities = {{UserClass::non_routed, 2}};
    sc.horizon = 3.0;
    sc.steps = 300;
    sc.solver.cells = 50;
    const auto st = simulate(sc);
    CHECK(travel_time(st, {0, 1}, 0.5) == doctest::Approx(2.5).epsilon(1e-12));
    const auto times = instantaneous_path_times(st, 0.2, 0, 2);
    REQUIRE(times.size() == 1);
    CHECK(times[0].time == doctest::Approx(2.0));
  }
  {
    // Steady state W = 0.8 with lambda = 1/(1+5W) = 0.2: inflow 0.16 keeps it.
    auto sc = single_link(inverse_speed(1.0, 5.0), 8.0, 400, 80);
    sc.rho0 = {{Eigen::ArrayXd::Constant(80, 0.8)}};
    sc.sources.set(0, 0, 0, PiecewiseSchedule::constant(0.16, 0, 8));
    const auto st = simulate(sc);
    CHECK(travel_time(st, {0}, 1.0) - 1.0 == doctest::Approx(5.0).epsilon(1e-8));
    CHECK(frozen_link_time(st, 0, 4.0) == doctest::Approx(5.0).epsilon(1e-8));
  }
}

TEST_CASE("frozen path times on parallel links") {
  NetworkScenario sc;
  sc.net = RoadNetwork({0, 1}, {{0, 1}, {0, 1}});
  sc.commodities = {{UserClass::non_routed, 1}};
  sc.splits.set(0, 0, 0, PiecewiseSchedule::constant(0.5, 0, 1));
  sc.splits.set(0, 1, 0, PiecewiseSchedule::constant(0.5, 0, 1));
  sc.solver.cells = 40;
  sc.rho0 = {{Eigen::ArrayXd::Zero(40)}, {Eigen::ArrayXd::Constant(40, 4.0)}};
  sc.horizon = 1.0;
  sc.steps = 50;
  const auto st = simulate(sc);
  const auto times = instantaneous_path_times(st, 0.0, 0, 1);
  REQUIRE(times.size() == 2);
  CHECK(times[0].time == doctest::Approx(1.0));
  CHECK(times[1].time == doctest::Approx(5.0));
}

TEST_CASE("path enumeration limits") {
  // Seven diamonds in a row: 2^7 = 128 paths.
  std::vector<NodeId> nodes;
  std::vector<Link> links;
  for (int i = 0; i <= 14; ++i) nodes.push_back(i);
  for (int i = 0; i < 14; i += 2) {
    links.push_back({i, i + 1});
    links.push_back({i, i + 2});
    links.push_back({i + 1, i + 2});
  }
  RoadNetwork net(nodes, links);
  CHECK_THROWS_WITH_AS(enumerate_paths(net, 0, 14), doctest::Contains("PathLimitExceeded"), Error);
  CHECK(enumerate_paths(net, 0, 14, 200).size() == 128);
  CHECK_THROWS_WITH_AS(enumerate_paths(net, 14, 0), doctest::Contains("NoPath"), Error);
}

TEST_CASE("parcel still on the link at the horizon") {
  const auto st = simulate(single_link(constant_speed(0.5), 1.0, 50, 20));
  CHECK_THROWS_WITH_AS(travel_time(st, {0}, 0.2), doctest::Contains("HorizonExceeded"), Error);
}

TEST_CASE("global conservation on random networks") {
  Rng rng(99);
  for (int trial = 0; trial < 12; ++trial) {
    const auto sc = testing_support::random_scenario(rng, 6, 3, 40, 2.0);
    const auto st = simulate(sc);
    for (const auto& m : mass_balance(st)) CHECK(std::abs(m.relative_residual()) < 1e-9);
    for (const auto& rec : st.links) {
      CHECK(rec.aggregate.minCoeff() >= -1e-12);
      Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(rec.aggregate.rows(), rec.aggregate.cols());
      for (const auto& r : rec.rho) sum += r;
      CHECK((sum - rec.aggregate).abs().maxCoeff() <= 1e-12);
    }
  }
}

namespace {

NetworkScenario relabel(const NetworkScenario& sc, const std::vector<int>& perm) {
  auto out = sc;
  out.splits = SplitSchedule{};
  out.sources = SourceSchedule{};
  for (std::size_t k = 0; k < perm.size(); ++k) out.commodities[static_cast<std::size_t>(perm[k])] = sc.commodities[k];
  for (const auto& [key, f] : sc.splits.entries()) out.splits.set(std::get<0>(key), std::get<1>(key), perm[static_cast<std::size_t>(std::get<2>(key))], f);
  for (const auto& [key, f] : sc.sources.entries()) out.sources.set(std::get<0>(key), std::get<1>(key), perm[static_cast<std::size_t>(std::get<2>(key))], f);
  return out;
}

}  // namespace

TEST_CASE("relabelling commodities leaves the aggregate unchanged") {
  auto sc = diamond(2.0);
  sc.commodities = {{UserClass::non_routed, 4}, {UserClass::routed, 4}, {UserClass::routed, 4}};
  for (int k : {1, 2}) {
    sc.splits.set(1, 0, k, PiecewiseSchedule::constant(0.3, 0, 2));
    sc.splits.set(1, 1, k, PiecewiseSchedule::constant(0.7, 0, 2));
    sc.sources.set(1, 1, k, PiecewiseSchedule::constant(0.25, 0, 1));
  }
  const auto a = simulate(sc);
  const auto b = simulate(relabel(sc, {0, 2, 1}));
  for (std::size_t l = 0; l < a.links.size(); ++l) {
    CHECK((a.links[l].aggregate == b.links[l].aggregate).all());
    CHECK((a.links[l].rho[1] == b.links[l].rho[2]).all());
  }
  // Different data: swapping changes only the summation order.
  sc.sources.set(1, 1, 2, PiecewiseSchedule::constant(0.6, 0, 1));
  const auto c = simulate(sc);
  const auto d = simulate(relabel(sc, {2, 0, 1}));
  for (std::size_t l = 0; l < c.links.size(); ++l) {
    CHECK((c.links[l].aggregate - d.links[l].aggregate).abs().maxCoeff() < 1e-13);
    CHECK((c.links[l].rho[0] - d.links[l].rho[2]).abs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("repeated runs are bit-identical") {
  Rng rng(5);
  const auto sc = testing_support::random_scenario(rng, 6, 2, 30, 1.5);
  const auto a = simulate(sc);
  const auto b = simulate(sc);
  for (std::size_t l = 0; l < a.links.size(); ++l) {
    CHECK((a.links[l].aggregate == b.links[l].aggregate).all());
    CHECK((a.links[l].outflow == b.links[l].outflow).all());
  }
}

TEST_CASE("FIFO and monotone congestion on a link") {
  auto sc = single_link(inverse_speed(1.0, 5.0), 12.0, 1200, 200);
  sc.sources.set(0, 0, 0, PiecewiseSchedule({{0.0, 2.0, 0.0, 1.0 / 3.0}}));
  const auto light = simulate(sc);
  sc.rho0 = {{indicator_cells(200, 0.5, 0.7, 4.0)}};
  const auto heavy = simulate(sc);
  sc.rho0 = {{indicator_cells(200, 0.5, 0.7, 8.0)}};
  const auto heavier = simulate(sc);
  double previous = 0.0;
  for (double t0 = 0.0; t0 <= 2.0; t0 += 0.25) {
    const double e0 = travel_time(light, {0}, t0), e1 = travel_time(heavy, {0}, t0), e2 = travel_time(heavier, {0}, t0);
    CHECK(e1 >= e0);
    CHECK(e2 >= e1);
    CHECK(e1 > previous);
    previous = e1;
  }
  // The parcel entering at t = 1 leaves noticeably later behind the initial bump.
  CHECK(travel_time(heavy, {0}, 1.0) >= 1.1 * travel_time(light, {0}, 1.0));
}

TEST_CASE("split controller rows are used and checked") {
  NetworkScenario sc;
  sc.net = RoadNetwork({0, 1, 2, 3}, {{0, 1}, {1, 2}, {1, 2}, {2, 3}});
  sc.commodities = {{UserClass::routed, 3}};
  sc.sources.set(0, 0, 0, PiecewiseSchedule::constant(0.5, 0, 2));
  sc.horizon = 2.0;
  sc.steps = 100;
  sc.solver.cells = 40;
  SplitController ctl;
  ctl.controls = {true};
  ctl.rows = [](const NetworkState& so_far, int step, int) {
    CHECK(so_far.completed == step);
    return std::map<NodeId, Eigen::ArrayXd>{{1, Eigen::Array2d(1.0, 0.0)}};
  };
  const auto st = simulate(sc, &ctl);
  CHECK((st.links[2].inflow.col(0) == 0.0).all());
  CHECK(st.links[1].inflow.col(0).maxCoeff() > 0.2);
  CHECK((st.theta[static_cast<std::size_t>(st.net.node_index(1))][0].col(0) == 1.0).all());

  ctl.rows = [](const NetworkState&, int, int) {
    return std::map<NodeId, Eigen::ArrayXd>{{1, Eigen::Array2d(0.7, 0.7)}};
  };
  CHECK_THROWS_WITH_AS(simulate(sc, &ctl), doctest::Contains("SplitRowInvalid"), Error);
}

TEST_CASE("scenario errors carry link context") {
  auto sc = single_link(VelocityLaw{[](double, double W) { return 1.0 - W; }, false, "1-W"}, 1.0, 10, 10);
  sc.rho0 = {{Eigen::ArrayXd::Constant(10, 2.0)}};
  CHECK_THROWS_WITH_AS(simulate(sc), doctest::Contains("link 0 (0->1)"), Error);

  auto dead = single_link(constant_speed(1), 1.0, 10, 10);
  dead.net = RoadNetwork({0, 1, 2}, {{0, 1}, {0, 2}});
  dead.splits.set(0, 0, 0, PiecewiseSchedule::constant(1.0, 0, 1));
  dead.rho0 = {{}, {Eigen::ArrayXd::Ones(10)}};
  CHECK_THROWS_WITH_AS(simulate(dead), doctest::Contains("cannot reach"), Error);
}
