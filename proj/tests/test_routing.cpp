#include "mobility/error.hpp"
#include "mobility/routing.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace mobility;

namespace {

// Two parallel links 0 -> 1 with initial densities (w0, w1) everywhere.
NetworkState parallel_state(double w0, double w1, double horizon = 1.0) {
  NetworkScenario sc;
  sc.net = RoadNetwork({0, 1}, {{0, 1}, {0, 1}});
  sc.commodities = {{UserClass::routed, 1}};
  sc.splits.set(0, 0, 0, PiecewiseSchedule::constant(0.25, 0, horizon));
  sc.splits.set(0, 1, 0, PiecewiseSchedule::constant(0.75, 0, horizon));
  sc.solver.cells = 40;
  sc.rho0 = {{Eigen::ArrayXd::Constant(40, w0)}, {Eigen::ArrayXd::Constant(40, w1)}};
  sc.horizon = horizon;
  sc.steps = 50;
  return simulate(sc);
}

EquilibriumSetup three_routes() {
  EquilibriumSetup s;
  s.base.net = RoadNetwork({0, 1, 2}, {{0, 1}, {1, 2}, {1, 2}, {1, 2}});
  s.base.models = {{constant_speed(2.0), NonlocalWindow::whole()},
                   {inverse_speed(1.0, 1.0), NonlocalWindow::whole()},
                   {inverse_speed(0.8, 1.0), NonlocalWindow::whole()},
                   {inverse_speed(0.6, 1.0), NonlocalWindow::whole()}};
  for (int a = 1; a <= 3; ++a) s.base.splits.set(1, a, 0, PiecewiseSchedule::constant(1.0 / 3, 0, 12));
  s.base.horizon = 12;
  s.base.solver.cells = 50;
  s.base.steps = steps_for_cfl(12, 50, 2.0);
  s.entry_link = 0;
  s.demand = PiecewiseSchedule::constant(1.5, 0, 4);
  s.destination = 2;
  s.routed.logit.beta = 50;
  return s;
}

void check_rows(const std::map<NodeId, Eigen::ArrayXd>& rows) {
  for (const auto& [v, r] : rows) {
    CHECK(std::abs(r.sum() - 1.0) <= 1e-12);
    CHECK(r.minCoeff() >= 0.0);
    CHECK(r.maxCoeff() <= 1.0);
  }
}

}  // namespace

TEST_CASE("static policy returns the scenario row") {
  const auto st = parallel_state(0.0, 4.0);
  SplitSchedule splits;
  splits.set(0, 0, 0, PiecewiseSchedule::constant(0.25, 0, 1));
  splits.set(0, 1, 0, PiecewiseSchedule::constant(0.75, 0, 1));
  for (int n : {0, 10, 49}) {
    const auto d = compute_splits({PolicyKind::static_splits}, st, splits, n, 0);
    CHECK(d.rows.at(0)(0) == 0.25);
    CHECK(d.rows.at(0)(1) == 0.75);
    CHECK(!d.fallback_used);
  }
}

TEST_CASE("logit on parallel links") {
  SplitSchedule none;
  for (double beta : {0.0, 1.0, 50.0}) {
    RoutingPolicy p{PolicyKind::full_information};
    p.logit.beta = beta;
    const auto d = compute_splits(p, parallel_state(1.0, 1.0), none, 0, 0);
    CHECK(d.rows.at(0)(0) == doctest::Approx(0.5).epsilon(1e-14));
  }
  RoutingPolicy fast{PolicyKind::full_information};
  fast.logit.beta = 50;
  const auto d = compute_splits(fast, parallel_state(0.0, 4.0), none, 0, 0);
  CHECK(d.rows.at(0)(0) > 0.999);
}

TEST_CASE("junction logit matches path enumeration") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    auto sc = testing_support::random_scenario(rng, 7, 1, 10, 1.0);
    const NodeId dest = sc.commodities[0].destination;
    std::vector<double> costs(static_cast<std::size_t>(sc.net.link_count()));
    for (auto& c : costs) c = rng.uniform(0.5, 3.0);
    LogitRule rule{rng.uniform(0.0, 3.0)};
    const auto rows = logit_splits(sc.net, dest, costs, rule);
    check_rows(rows);
    for (const auto& [v, row] : rows) {
      // Oracle: probability of each first link over all paths from v.
      const auto paths = enumerate_paths(sc.net, v, dest, 10000);
      const auto& outs = sc.net.out_links(v);
      Eigen::ArrayXd mass = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(outs.size()));
      for (const auto& p : paths) {
        double c = 0.0;
        for (LinkIndex a : p) c += costs[static_cast<std::size_t>(a)];
        const auto pos = std::find(outs.begin(), outs.end(), p.front()) - outs.begin();
        mass(pos) += std::exp(-rule.beta * c);
      }
      CHECK((row - mass / mass.sum()).abs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("scaling costs keeps the logit argmax") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    RoadNetwork net({0, 1}, {{0, 1}, {0, 1}, {0, 1}, {0, 1}});
    std::vector<double> costs(4);
    for (auto& c : costs) c = rng.uniform(0.5, 5.0);
    const double scale = rng.uniform(0.1, 10.0), beta = rng.uniform(0.1, 4.0);
    std::vector<double> scaled = costs;
    for (auto& c : scaled) c *= scale;
    Eigen::Index i1, i2;
    const auto base = logit_splits(net, 1, costs, {beta}).at(0);
    base.maxCoeff(&i1);
    logit_splits(net, 1, scaled, {beta}).at(0).maxCoeff(&i2);
    CHECK(i1 == i2);
    CHECK((logit_splits(net, 1, scaled, {beta / scale}).at(0) - base).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("delay zero and full mask reproduce full information exactly") {
  Rng rng(12);
  for (int trial = 0; trial < 6; ++trial) {
    const auto sc = testing_support::random_scenario(rng, 6, 2, 20, 1.0);
    const auto st = simulate(sc);
    RoutingPolicy full{PolicyKind::full_information};
    full.logit.beta = 2.0;
    RoutingPolicy delayed = full;
    delayed.kind = PolicyKind::delayed;
    delayed.delay = 0.0;
    RoutingPolicy sub = full;
    sub.kind = PolicyKind::sub_network;
    sub.mask.assign(static_cast<std::size_t>(sc.net.link_count()), true);
    for (int n : {0, st.steps / 2, st.steps - 1})
      for (int k = 0; k < static_cast<int>(sc.commodities.size()); ++k) {
        const auto a = compute_splits(full, st, sc.splits, n, k).rows;
        const auto b = compute_splits(delayed, st, sc.splits, n, k).rows;
        const auto c = compute_splits(sub, st, sc.splits, n, k).rows;
        REQUIRE(a.size() == b.size());
        REQUIRE(a.size() == c.size());
        for (const auto& [v, row] : a) {
          CHECK((row == b.at(v)).all());
          CHECK((row == c.at(v)).all());
        }
      }
  }
}

TEST_CASE("every policy emits valid rows") {
  Rng rng(41);
  for (int trial = 0; trial < 8; ++trial) {
    const auto sc = testing_support::random_scenario(rng, 6, 2, 20, 1.0);
    const auto st = simulate(sc);
    for (int kind = 0; kind <= static_cast<int>(PolicyKind::simplified_forecast); ++kind) {
      RoutingPolicy p{static_cast<PolicyKind>(kind)};
      p.logit.beta = 3.0;
      p.delay = 0.3;
      p.lookahead = 2;
      p.forecast_horizon = 0.5;
      p.congestion_weight = 1.0;
      p.mask.assign(static_cast<std::size_t>(sc.net.link_count()), true);
      p.mask[0] = false;
      p.history.times = {0.2, 0.8};
      p.history.costs = Eigen::ArrayXXd::Constant(2, sc.net.link_count(), 1.0);
      p.history.costs(1, 0) = 3.0;
      PolicyMemory memory;
      for (int n = 0; n < st.steps; n += 7)
        for (int k = 0; k < static_cast<int>(sc.commodities.size()); ++k) check_rows(compute_splits(p, st, sc.splits, n, k, &memory).rows);
    }
  }
}

TEST_CASE("policies without enough data fall back to static rows") {
  const auto st = parallel_state(0.0, 4.0);
  SplitSchedule splits;
  splits.set(0, 0, 0, PiecewiseSchedule::constant(0.25, 0, 1));
  splits.set(0, 1, 0, PiecewiseSchedule::constant(0.75, 0, 1));
  RoutingPolicy delayed{PolicyKind::delayed};
  delayed.delay = 0.5;
  auto d = compute_splits(delayed, st, splits, 10, 0);  // t = 0.2 < delay
  CHECK(d.fallback_used);
  CHECK(d.rows.at(0)(0) == 0.25);
  d = compute_splits(delayed, st, splits, 40, 0);
  CHECK(!d.fallback_used);

  RoutingPolicy db{PolicyKind::database};
  CHECK(compute_splits(db, st, splits, 5, 0).fallback_used);
  db.history.times = {0.5};
  db.history.costs = Eigen::ArrayXXd(1, 2);
  db.history.costs << 5.0, 1.0;
  db.logit.beta = 10;
  CHECK(compute_splits(db, st, splits, 5, 0).fallback_used);
  d = compute_splits(db, st, splits, 30, 0);
  CHECK(!d.fallback_used);
  CHECK(d.rows.at(0)(1) > 0.99);

  RoutingPolicy forecast{PolicyKind::simplified_forecast};
  CHECK(compute_splits(forecast, st, splits, 0, 0).fallback_used);
  CHECK(!compute_splits(forecast, st, splits, 3, 0).fallback_used);
}

TEST_CASE("local and incentivized policies lean away from congestion") {
  const auto st = parallel_state(0.5, 3.0);
  SplitSchedule splits;
  splits.set(0, 0, 0, PiecewiseSchedule::constant(0.25, 0, 1));
  splits.set(0, 1, 0, PiecewiseSchedule::constant(0.75, 0, 1));
  RoutingPolicy local{PolicyKind::local};
  local.logit.beta = 1.0;
  CHECK(compute_splits(local, st, splits, 0, 0).rows.at(0)(0) > 0.25);
  RoutingPolicy plain{PolicyKind::full_information};
  RoutingPolicy incentive{PolicyKind::incentivized};
  incentive.congestion_weight = 2.0;
  CHECK(compute_splits(incentive, st, splits, 0, 0).rows.at(0)(0) > compute_splits(plain, st, splits, 0, 0).rows.at(0)(0));
}

TEST_CASE("ex ante rows are frozen at departure") {
  const auto st = parallel_state(0.0, 4.0, 2.0);
  SplitSchedule splits;
  RoutingPolicy p{PolicyKind::ex_ante};
  p.departure_time = 0.4;
  PolicyMemory memory;
  const auto before = compute_splits(p, st, splits, 0, 0, &memory);
  CHECK(memory.frozen.empty());
  const auto at = compute_splits(p, st, splits, 10, 0, &memory).rows.at(0);
  const auto later = compute_splits(p, st, splits, 45, 0, &memory).rows.at(0);
  CHECK((at == later).all());
  RoutingPolicy full{PolicyKind::full_information};
  CHECK((compute_splits(full, st, splits, 45, 0).rows.at(0) != at).any());
}

TEST_CASE("wardrop gap") {
  {
    NetworkScenario sc;
    sc.net = RoadNetwork({0, 1, 2}, {{0, 1}, {1, 2}});
    sc.commodities = {{UserClass::routed, 2}};
    sc.sources.set(0, 0, 0, PiecewiseSchedule::constant(1.0, 0, 1));
    sc.solver.cells = 20;
    sc.steps = 40;
    const auto st = simulate(sc);
    CHECK(wardrop_gap(st, 0.5, 0, 2, 0.01, {0}) == 0.0);
  }
  const auto congested = parallel_state(0.0, 4.0);
  CHECK(wardrop_gap(congested, 0.0, 0, 1, 0.01, {0}) == doctest::Approx(4.0));
  CHECK(wardrop_gap(congested, 0.0, 0, 1, 0.9, {0}) == 0.0);
  CHECK(wardrop_gap(parallel_state(1.0, 1.0), 0.0, 0, 1, 0.01, {0}) == 0.0);
}

TEST_CASE("day-to-day iteration") {
  auto s = three_routes();
  s.routed_fraction = 0.0;
  s.rounds = 4;
  const auto still = equilibrium_iterate(s);
  for (double g : still.gaps) CHECK(g == still.gaps.front());
  CHECK(still.gaps.front() > 0.5);

  s.routed_fraction = 1.0;
  s.rounds = 40;
  const auto full = equilibrium_iterate(s);
  CHECK(full.gaps.back() < 0.05 * full.min_path_times.back());
  CHECK(full.gaps.back() < full.gaps.front());
}
