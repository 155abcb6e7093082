#include "mobility/network_sim.hpp"

#include "mobility/csv.hpp"
#include "mobility/error.hpp"
#include "mobility/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace mobility {

namespace {

std::string link_name(const RoadNetwork& net, LinkIndex a) {
  return "link " + std::to_string(a) + " (" + std::to_string(net.link(a).tail) + "->" +
         std::to_string(net.link(a).head) + ")";
}

void record_nonlocal(LinkRecord& rec, const NonlocalWindow& window, int row) {
  const Eigen::ArrayXd total = rec.aggregate.row(row).transpose();
  const auto N = total.size();
  if (window.whole_link()) {
    rec.W(row, 0) = total.sum() / static_cast<double>(N);
    return;
  }
  RowIntegrator<double> integ(total);
  for (Eigen::Index j = 0; j <= N; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(N);
    rec.W(row, j) = integ.integral(window.lower(x), window.upper(x));
  }
}

}  // namespace

double NetworkState::nonlocal_at(LinkIndex a, double t, double x) const {
  const auto& W = links.at(static_cast<std::size_t>(a)).W;
  const double s = std::clamp(t / dt(), 0.0, static_cast<double>(completed));
  const int n = std::min(static_cast<int>(s), std::max(completed - 1, 0));
  const double f = completed == 0 ? 0.0 : s - n;
  auto row_value = [&](int r) {
    if (W.cols() == 1) return W(r, 0);
    const Eigen::ArrayXd knots = W.row(r).transpose();
    return interpolate_uniform(knots, 1.0, x);
  };
  const double w0 = row_value(n);
  return f == 0.0 ? w0 : (1 - f) * w0 + f * row_value(n + 1);
}

double NetworkState::speed(LinkIndex a, double t, double x) const {
  return model(a).law(t, nonlocal_at(a, t, x));
}

double NetworkState::link_mass(LinkIndex a, int row) const {
  return links.at(static_cast<std::size_t>(a)).aggregate.row(row).sum() / cells;
}

double NetworkState::commodity_mass(int k, int row) const {
  double total = 0.0;
  for (const auto& rec : links) total += rec.rho[static_cast<std::size_t>(k)].row(row).sum();
  return total / cells;
}

NetworkState simulate(const NetworkScenario& sc, const SplitController* controller) {
  const auto& net = sc.net;
  const auto order = validate_acyclic(net);
  const int K = static_cast<int>(sc.commodities.size());
  const int L = net.link_count();
  const int N = sc.solver.cells;
  if (K == 0) throw Error(Errc::InvalidScenario, "no commodities");
  if (!(sc.horizon > 0.0) || sc.steps < 1 || N < 1)
    throw Error(Errc::InvalidScenario, "horizon, steps and cells must be positive");
  if (sc.models.size() != 1 && static_cast<int>(sc.models.size()) != L)
    throw Error(Errc::InvalidScenario, "need one link model or one per link");
  std::vector<bool> routed_externally(static_cast<std::size_t>(K), false);
  if (controller) {
    if (static_cast<int>(controller->controls.size()) != K)
      throw Error(Errc::DimensionMismatch, "split controller flags do not match the commodities");
    routed_externally = controller->controls;
  }
  validate_routing_inputs(net, sc.commodities, sc.splits, sc.sources, sc.horizon, routed_externally);

  const double dt = sc.horizon / sc.steps;
  NetworkState st;
  st.net = net;
  st.commodities = sc.commodities;
  st.models = sc.models;
  st.horizon = sc.horizon;
  st.steps = sc.steps;
  st.cells = N;
  st.arrivals = Eigen::ArrayXXd::Zero(sc.steps, K);
  st.injected = Eigen::ArrayXXd::Zero(sc.steps, K);
  st.theta.resize(static_cast<std::size_t>(net.node_count()));
  for (int i = 0; i < net.node_count(); ++i) {
    const auto degree = static_cast<Eigen::Index>(net.out_links(net.nodes()[static_cast<std::size_t>(i)]).size());
    st.theta[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(K), Eigen::ArrayXXd::Zero(sc.steps, degree));
  }

  // Source rates on the grid, one series per (node, link, commodity) entry.
  std::map<LinkTimeTable::Key, Eigen::ArrayXd> source_rates;
  double total_source = 0.0;
  for (const auto& [key, f] : sc.sources.entries()) {
    source_rates[key] = f.step_averages(sc.horizon, sc.steps);
    total_source += source_rates[key].sum() * dt;
  }

  std::vector<LinkStepper> steppers;
  steppers.reserve(static_cast<std::size_t>(L));
  st.links.resize(static_cast<std::size_t>(L));
  double total_initial = 0.0;
  SolverOptions options = sc.solver;
  options.window_length = std::min(options.window_length, sc.horizon);
  for (LinkIndex a = 0; a < L; ++a) {
    std::vector<Eigen::ArrayXd> rho0(static_cast<std::size_t>(K), Eigen::ArrayXd::Zero(N));
    if (static_cast<std::size_t>(a) < sc.rho0.size())
      for (int k = 0; k < K && static_cast<std::size_t>(k) < sc.rho0[static_cast<std::size_t>(a)].size(); ++k) {
        const auto& r = sc.rho0[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)];
        if (r.size() == 0) continue;
        if (r.size() != N)
          throw Error(Errc::DimensionMismatch, "initial density on " + link_name(net, a) + " has " +
                                                   std::to_string(r.size()) + " cells, expected " + std::to_string(N));
        if (!r.allFinite() || (r < 0.0).any())
          throw Error(Errc::InvalidScenario, "initial density on " + link_name(net, a) + " must be nonnegative");
        if ((r > 0.0).any() &&
            !net.viable_links(sc.commodities[static_cast<std::size_t>(k)].destination)[static_cast<std::size_t>(a)])
          throw Error(Errc::InvalidScenario, "commodity " + std::to_string(k) + " has initial mass on " +
                                                 link_name(net, a) + " which cannot reach its destination");
        rho0[static_cast<std::size_t>(k)] = r;
        total_initial += r.sum() / N;
      }
    auto& rec = st.links[static_cast<std::size_t>(a)];
    rec.rho.assign(static_cast<std::size_t>(K), Eigen::ArrayXXd::Zero(sc.steps + 1, N));
    rec.aggregate = Eigen::ArrayXXd::Zero(sc.steps + 1, N);
    rec.inflow = Eigen::ArrayXXd::Zero(sc.steps, K);
    rec.outflow = Eigen::ArrayXXd::Zero(sc.steps, K);
    rec.W = Eigen::ArrayXXd::Zero(sc.steps + 1, sc.model(a).window.whole_link() ? 1 : N + 1);
    for (int k = 0; k < K; ++k) {
      rec.rho[static_cast<std::size_t>(k)].row(0) = rho0[static_cast<std::size_t>(k)].transpose();
      rec.aggregate.row(0) += rho0[static_cast<std::size_t>(k)].transpose();
    }
    record_nonlocal(rec, sc.model(a).window, 0);
    steppers.emplace_back(sc.model(a).law, sc.model(a).window, options, rho0, dt);
  }
  for (LinkIndex a = 0; a < L; ++a) {
    try {
      check_velocity(sc.model(a).law, sc.horizon, total_initial + total_source);
    } catch (const Error& e) {
      throw Error(e.code(), link_name(net, a) + ": " + e.what());
    }
  }

  std::vector<Eigen::ArrayXXd> node_inflow(static_cast<std::size_t>(net.node_count()));
  std::vector<bool> node_done(static_cast<std::size_t>(net.node_count()));
  std::vector<std::map<NodeId, Eigen::ArrayXd>> policy_rows(static_cast<std::size_t>(K));
  Eigen::ArrayXd in(K);

  auto resolve_junction = [&](NodeId v, int n) {
    const int vi = net.node_index(v);
    const auto& outs = net.out_links(v);
    const auto degree = static_cast<Eigen::Index>(outs.size());
    Eigen::ArrayXXd u = Eigen::ArrayXXd::Zero(degree, K);
    std::vector<double> incoming(static_cast<std::size_t>(K), 0.0);
    for (LinkIndex b : net.in_links(v))
      for (int k = 0; k < K; ++k) incoming[static_cast<std::size_t>(k)] += st.links[static_cast<std::size_t>(b)].outflow(n, k);
    const double t0 = n * dt, t1 = (n + 1) * dt;
    for (int k = 0; k < K; ++k) {
      const NodeId dest = sc.commodities[static_cast<std::size_t>(k)].destination;
      const auto& viable = net.viable_links(dest);
      const auto viable_count = std::count_if(outs.begin(), outs.end(),
                                              [&](LinkIndex a) { return viable[static_cast<std::size_t>(a)]; });
      Eigen::ArrayXd theta = Eigen::ArrayXd::Zero(degree);
      if (v != dest && viable_count > 0) {
        const auto& rows = policy_rows[static_cast<std::size_t>(k)];
        auto it = rows.find(v);
        if (routed_externally[static_cast<std::size_t>(k)] && it != rows.end()) {
          if (it->second.size() != degree)
            throw Error(Errc::SplitRowInvalid, "policy row at node " + std::to_string(v) + " has wrong length");
          theta = it->second;
          for (Eigen::Index i = 0; i < degree; ++i)
            if (!viable[static_cast<std::size_t>(outs[static_cast<std::size_t>(i)])] && theta(i) != 0.0)
              throw Error(Errc::SplitRowInvalid, "policy routes commodity " + std::to_string(k) +
                                                     " onto a link that cannot reach its destination");
        } else {
          theta = sc.splits.row(net, v, k, dest, t0, t1);
        }
        check_split_row(std::span<const double>(theta.data(), static_cast<std::size_t>(degree)), v, k);
      } else if (v != dest && incoming[static_cast<std::size_t>(k)] > 0.0) {
        throw Error(Errc::InvalidScenario, "commodity " + std::to_string(k) + " reaches node " + std::to_string(v) +
                                               " with no way to its destination");
      }
      Eigen::ArrayXd s = Eigen::ArrayXd::Zero(degree);
      for (Eigen::Index i = 0; i < degree; ++i) {
        auto src = source_rates.find({v, outs[static_cast<std::size_t>(i)], k});
        if (src != source_rates.end()) s(i) = src->second(n);
      }
      st.injected(n, k) += s.sum();
      st.theta[static_cast<std::size_t>(vi)][static_cast<std::size_t>(k)].row(n) = theta.transpose();
      const double y_in = v == dest ? 0.0 : incoming[static_cast<std::size_t>(k)];
      u.col(k) = junction_inflows(std::span<const double>(&y_in, 1),
                                  std::span<const double>(theta.data(), static_cast<std::size_t>(degree)),
                                  std::span<const double>(s.data(), static_cast<std::size_t>(degree)));
    }
    node_inflow[static_cast<std::size_t>(vi)] = std::move(u);
    node_done[static_cast<std::size_t>(vi)] = true;
  };

  for (int n = 0; n < sc.steps; ++n) {
    for (int k = 0; k < K; ++k)
      if (routed_externally[static_cast<std::size_t>(k)]) policy_rows[static_cast<std::size_t>(k)] = controller->rows(st, n, k);
    std::fill(node_done.begin(), node_done.end(), false);
    for (LinkIndex a : order) {
      const NodeId v = net.link(a).tail;
      const int vi = net.node_index(v);
      if (!node_done[static_cast<std::size_t>(vi)]) resolve_junction(v, n);
      const auto& outs = net.out_links(v);
      const auto pos = std::find(outs.begin(), outs.end(), a) - outs.begin();
      in = node_inflow[static_cast<std::size_t>(vi)].row(pos).transpose();
      auto& rec = st.links[static_cast<std::size_t>(a)];
      rec.inflow.row(n) = in.transpose();
      try {
        rec.outflow.row(n) = steppers[static_cast<std::size_t>(a)].step(in).transpose();
      } catch (const Error& e) {
        throw Error(e.code(), link_name(net, a) + ": " + e.what());
      }
      for (int k = 0; k < K; ++k)
        rec.rho[static_cast<std::size_t>(k)].row(n + 1) = steppers[static_cast<std::size_t>(a)].density(k).transpose();
      rec.aggregate.row(n + 1) = steppers[static_cast<std::size_t>(a)].aggregate().transpose();
      record_nonlocal(rec, sc.model(a).window, n + 1);
    }
    for (int k = 0; k < K; ++k)
      for (LinkIndex b : net.in_links(sc.commodities[static_cast<std::size_t>(k)].destination))
        st.arrivals(n, k) += st.links[static_cast<std::size_t>(b)].outflow(n, k);
    st.completed = n + 1;
  }
  return st;
}

double MassBalance::relative_residual() const {
  return (initial + injected - exited - stored) / std::max(1.0, initial + injected);
}

std::vector<MassBalance> mass_balance(const NetworkState& st) {
  const int K = static_cast<int>(st.commodities.size());
  std::vector<MassBalance> out(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto& m = out[static_cast<std::size_t>(k)];
    m.initial = st.commodity_mass(k, 0);
    m.stored = st.commodity_mass(k, st.completed);
    m.injected = st.injected.col(k).head(st.completed).sum() * st.dt();
    m.exited = st.arrivals.col(k).head(st.completed).sum() * st.dt();
  }
  return out;
}

double travel_time(const NetworkState& st, const std::vector<LinkIndex>& path, double entry_time) {
  if (path.empty()) throw Error(Errc::NoPath, "empty path");
  for (std::size_t i = 1; i < path.size(); ++i)
    if (st.net.link(path[i - 1]).head != st.net.link(path[i]).tail)
      throw Error(Errc::InvalidScenario, "path links are not connected head to tail");
  const double end = st.completed * st.dt();
  const double h_max = st.dt() / 2;
  double t = entry_time;
  for (LinkIndex a : path) {
    double x = 0.0;
    for (;;) {
      const double h = std::min(h_max, end - t);
      if (h <= 1e-14 * std::max(1.0, end))
        throw Error(Errc::HorizonExceeded, "parcel entering at t=" + fmt(entry_time) + " is still on link " +
                                               std::to_string(a) + " at x=" + fmt(x) + " at the horizon");
      const double k1 = st.speed(a, t, x);
      const double k2 = st.speed(a, t + h, std::min(x + h * k1, 1.0));
      const double next = x + h / 2 * (k1 + k2);
      if (next >= 1.0) {
        t += h * (1.0 - x) / (next - x);
        break;
      }
      x = next;
      t += h;
    }
  }
  return t;
}

std::vector<std::vector<LinkIndex>> enumerate_paths(const RoadNetwork& net, NodeId origin, NodeId destination,
                                                    std::size_t cap) {
  std::vector<std::vector<LinkIndex>> paths;
  if (origin == destination) throw Error(Errc::NoPath, "origin equals destination");
  const auto& viable = net.viable_links(destination);
  std::vector<LinkIndex> current;
  auto dfs = [&](auto&& self, NodeId v) -> void {
    if (v == destination) {
      if (paths.size() == cap)
        throw Error(Errc::PathLimitExceeded, "more than " + std::to_string(cap) + " paths from " +
                                                 std::to_string(origin) + " to " + std::to_string(destination));
      paths.push_back(current);
      return;
    }
    for (LinkIndex a : net.out_links(v)) {
      if (!viable[static_cast<std::size_t>(a)]) continue;
      current.push_back(a);
      self(self, net.link(a).head);
      current.pop_back();
    }
  };
  dfs(dfs, origin);
  if (paths.empty())
    throw Error(Errc::NoPath, "no path from " + std::to_string(origin) + " to " + std::to_string(destination));
  return paths;
}

double frozen_link_time(const NetworkState& st, LinkIndex a, double t) {
  if (st.links.at(static_cast<std::size_t>(a)).W.cols() == 1) return 1.0 / st.speed(a, t, 0.0);
  const int N = st.cells;
  Eigen::ArrayXd inv(N + 1);
  for (int j = 0; j <= N; ++j) inv(j) = 1.0 / st.speed(a, t, static_cast<double>(j) / N);
  return trapezoid(inv, 1.0 / N);
}

std::vector<PathTime> instantaneous_path_times(const NetworkState& st, double t, NodeId origin, NodeId destination,
                                               std::size_t cap) {
  if (t < 0.0 || t > st.horizon * (1 + 1e-12))
    throw Error(Errc::HorizonExceeded, "time " + fmt(t) + " outside the simulated horizon");
  std::vector<PathTime> out;
  std::vector<double> link_time(static_cast<std::size_t>(st.net.link_count()), -1.0);
  for (auto& p : enumerate_paths(st.net, origin, destination, cap)) {
    double total = 0.0;
    for (LinkIndex a : p) {
      auto& lt = link_time[static_cast<std::size_t>(a)];
      if (lt < 0.0) lt = frozen_link_time(st, a, t);
      total += lt;
    }
    out.push_back({std::move(p), total});
  }
  return out;
}

void write_link_csv(std::ostream& os, const NetworkState& st, LinkIndex a, int commodity, int time_stride) {
  os << "t,x,rho\n";
  const auto& rho = st.links.at(static_cast<std::size_t>(a)).rho.at(static_cast<std::size_t>(commodity));
  for (int n = 0; n <= st.completed; ++n) {
    if (n % time_stride != 0 && n != st.completed) continue;
    for (int j = 0; j < st.cells; ++j)
      os << fmt(n * st.dt()) << ',' << fmt((j + 0.5) / st.cells) << ',' << fmt(rho(n, j)) << '\n';
  }
}

void write_flux_csv(std::ostream& os, const NetworkState& st) {
  os << "t,link,commodity,inflow,outflow\n";
  for (int n = 0; n < st.completed; ++n)
    for (int a = 0; a < st.net.link_count(); ++a)
      for (int k = 0; k < static_cast<int>(st.commodities.size()); ++k)
        os << fmt(n * st.dt()) << ',' << a << ',' << k << ',' << fmt(st.links[static_cast<std::size_t>(a)].inflow(n, k))
           << ',' << fmt(st.links[static_cast<std::size_t>(a)].outflow(n, k)) << '\n';
}

}  // namespace mobility
