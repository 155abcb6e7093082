#include "mobility/routing.hpp"

#include "mobility/csv.hpp"
#include "mobility/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mobility {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct KindName {
  PolicyKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {PolicyKind::static_splits, "static"},
    {PolicyKind::ex_ante, "ex_ante"},
    {PolicyKind::local, "local"},
    {PolicyKind::sub_network, "sub_network"},
    {PolicyKind::full_information, "full_information"},
    {PolicyKind::delayed, "delayed"},
    {PolicyKind::incentivized, "incentivized"},
    {PolicyKind::database, "database"},
    {PolicyKind::simplified_forecast, "simplified_forecast"},
};

// Scenario rows; a node with several viable links and no row splits evenly
// (only reached when a policy falls back for a commodity routed entirely at
// run time).
std::map<NodeId, Eigen::ArrayXd> static_rows(const RoadNetwork& net, const SplitSchedule& splits, int k, NodeId dest,
                                             double t0, double t1) {
  std::map<NodeId, Eigen::ArrayXd> rows;
  const auto& viable = net.viable_links(dest);
  for (NodeId v : net.nodes()) {
    if (v == dest) continue;
    const auto& outs = net.out_links(v);
    Eigen::ArrayXd ok(static_cast<Eigen::Index>(outs.size()));
    for (std::size_t i = 0; i < outs.size(); ++i) ok(static_cast<Eigen::Index>(i)) = viable[static_cast<std::size_t>(outs[i])] ? 1.0 : 0.0;
    if (ok.sum() == 0.0) continue;
    bool has_row = false;
    for (LinkIndex a : outs) has_row = has_row || splits.find(v, a, k) != nullptr;
    rows[v] = has_row || ok.sum() == 1.0 ? splits.row(net, v, k, dest, t0, t1) : Eigen::ArrayXd(ok / ok.sum());
  }
  return rows;
}

double link_mass_at(const NetworkState& st, LinkIndex a, double t) {
  const double s = std::clamp(t / st.dt(), 0.0, static_cast<double>(st.completed));
  const int n = std::min(static_cast<int>(s), std::max(st.completed - 1, 0));
  const double f = st.completed == 0 ? 0.0 : s - n;
  const double m0 = st.link_mass(a, n);
  return f == 0.0 ? m0 : (1 - f) * m0 + f * st.link_mass(a, n + 1);
}

std::vector<double> frozen_costs(const NetworkState& st, double t) {
  std::vector<double> c(static_cast<std::size_t>(st.net.link_count()));
  for (int a = 0; a < st.net.link_count(); ++a) c[static_cast<std::size_t>(a)] = frozen_link_time(st, a, t);
  return c;
}

// Link time with the nonlocal argument extrapolated linearly from the last
// two stored rows over `horizon`.
double forecast_link_time(const NetworkState& st, LinkIndex a, int row, double horizon) {
  const auto& W = st.links[static_cast<std::size_t>(a)].W;
  const auto& law = st.model(a).law;
  const double t = row * st.dt();
  const double ratio = horizon / st.dt();
  auto predicted = [&](Eigen::Index j) { return std::max(0.0, W(row, j) + ratio * (W(row, j) - W(row - 1, j))); };
  if (W.cols() == 1) return 1.0 / law(t + horizon, predicted(0));
  const auto N = W.cols() - 1;
  double total = 0.0;
  for (Eigen::Index j = 0; j <= N; ++j) {
    const double w = (j == 0 || j == N) ? 0.5 : 1.0;
    total += w / law(t + horizon, predicted(j));
  }
  return total / static_cast<double>(N);
}

std::map<NodeId, Eigen::ArrayXd> fill_missing(std::map<NodeId, Eigen::ArrayXd> rows,
                                              const std::map<NodeId, Eigen::ArrayXd>& fallback) {
  for (const auto& [v, r] : fallback) rows.emplace(v, r);
  return rows;
}

}  // namespace

std::string to_string(PolicyKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& name) {
  for (const auto& kn : kKindNames)
    if (name == kn.name) return kn.kind;
  throw Error(Errc::InvalidScenario, "unknown routing policy '" + name + "'");
}

void RoutingPolicy::validate(const RoadNetwork& net, NodeId destination) const {
  if (!(logit.beta >= 0.0) || !std::isfinite(logit.beta)) throw Error(Errc::InvalidScenario, "logit beta must be >= 0");
  switch (kind) {
    case PolicyKind::delayed:
      if (!(delay >= 0.0)) throw Error(Errc::InvalidScenario, "delay must be >= 0");
      break;
    case PolicyKind::local:
      if (lookahead < 1) throw Error(Errc::InvalidScenario, "lookahead radius must be >= 1");
      break;
    case PolicyKind::simplified_forecast:
      if (!(forecast_horizon >= 0.0)) throw Error(Errc::InvalidScenario, "forecast horizon must be >= 0");
      break;
    case PolicyKind::incentivized:
      if (!(congestion_weight >= 0.0)) throw Error(Errc::InvalidScenario, "congestion weight must be >= 0");
      break;
    case PolicyKind::database:
      if (history.costs.cols() != net.link_count() || history.costs.rows() != static_cast<Eigen::Index>(history.times.size()))
        throw Error(Errc::InvalidScenario, "cost table must have one column per link and one row per time");
      if (!std::is_sorted(history.times.begin(), history.times.end()))
        throw Error(Errc::InvalidScenario, "cost table times must increase");
      if (history.costs.size() > 0 && !(history.costs > 0.0).all())
        throw Error(Errc::InvalidScenario, "cost table entries must be positive");
      break;
    case PolicyKind::sub_network: {
      if (static_cast<int>(mask.size()) != net.link_count())
        throw Error(Errc::InvalidScenario, "sub-network mask needs one entry per link");
      bool reaches = false;
      for (LinkIndex a : net.in_links(destination)) reaches = reaches || mask[static_cast<std::size_t>(a)];
      if (!reaches) throw Error(Errc::InvalidScenario, "sub-network does not reach the destination");
      break;
    }
    default:
      break;
  }
}

std::map<NodeId, Eigen::ArrayXd> logit_splits(const RoadNetwork& net, NodeId destination,
                                              const std::vector<double>& link_costs, const LogitRule& rule,
                                              const std::vector<bool>& mask) {
  const auto& viable = net.viable_links(destination);
  auto allowed = [&](LinkIndex a) {
    return viable[static_cast<std::size_t>(a)] && (mask.empty() || mask[static_cast<std::size_t>(a)]);
  };
  std::vector<double> logZ(static_cast<std::size_t>(net.node_count()), 0.0);
  std::vector<bool> known(static_cast<std::size_t>(net.node_count()), false);
  auto solve = [&](auto&& self, NodeId v) -> double {
    const auto vi = static_cast<std::size_t>(net.node_index(v));
    if (known[vi]) return logZ[vi];
    double result = kNegInf;
    if (v == destination) {
      result = 0.0;
    } else {
      std::vector<double> terms;
      for (LinkIndex a : net.out_links(v))
        if (allowed(a)) {
          const double z = self(self, net.link(a).head);
          if (z > kNegInf) terms.push_back(-rule.beta * link_costs[static_cast<std::size_t>(a)] + z);
        }
      if (!terms.empty()) {
        const double top = *std::max_element(terms.begin(), terms.end());
        double sum = 0.0;
        for (double x : terms) sum += std::exp(x - top);
        result = top + std::log(sum);
      }
    }
    known[vi] = true;
    logZ[vi] = result;
    return result;
  };

  std::map<NodeId, Eigen::ArrayXd> rows;
  for (NodeId v : net.nodes()) {
    if (v == destination || solve(solve, v) == kNegInf) continue;
    const auto& outs = net.out_links(v);
    Eigen::ArrayXd theta = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(outs.size()));
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const LinkIndex a = outs[i];
      if (!allowed(a)) continue;
      const double z = solve(solve, net.link(a).head);
      if (z == kNegInf) continue;
      theta(static_cast<Eigen::Index>(i)) = std::exp(-rule.beta * link_costs[static_cast<std::size_t>(a)] + z - logZ[static_cast<std::size_t>(net.node_index(v))]);
    }
    rows[v] = theta / theta.sum();
  }
  return rows;
}

SplitDecision compute_splits(const RoutingPolicy& policy, const NetworkState& st, const SplitSchedule& static_splits,
                             int step, int commodity, PolicyMemory* memory) {
  const NodeId dest = st.commodities.at(static_cast<std::size_t>(commodity)).destination;
  const double t = step * st.dt();
  const auto statics = [&] { return static_rows(st.net, static_splits, commodity, dest, t, t + st.dt()); };
  SplitDecision out;
  switch (policy.kind) {
    case PolicyKind::static_splits:
      out.rows = statics();
      break;
    case PolicyKind::full_information:
      out.rows = logit_splits(st.net, dest, frozen_costs(st, t), policy.logit);
      break;
    case PolicyKind::sub_network:
      out.rows = fill_missing(logit_splits(st.net, dest, frozen_costs(st, t), policy.logit, policy.mask), statics());
      break;
    case PolicyKind::delayed:
      if (t - policy.delay < 0.0) {
        out.rows = statics();
        out.fallback_used = true;
      } else {
        out.rows = logit_splits(st.net, dest, frozen_costs(st, t - policy.delay), policy.logit);
      }
      break;
    case PolicyKind::incentivized: {
      auto costs = frozen_costs(st, t);
      for (int a = 0; a < st.net.link_count(); ++a)
        costs[static_cast<std::size_t>(a)] += policy.congestion_weight * link_mass_at(st, a, t);
      out.rows = logit_splits(st.net, dest, costs, policy.logit);
      break;
    }
    case PolicyKind::database: {
      const auto& h = policy.history;
      if (h.times.empty() || t < h.times.front()) {
        out.rows = statics();
        out.fallback_used = true;
        break;
      }
      const auto it = std::upper_bound(h.times.begin(), h.times.end(), t);
      const auto hi = static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(it - h.times.begin(), static_cast<std::ptrdiff_t>(h.times.size()) - 1));
      const auto lo = static_cast<Eigen::Index>(std::max<std::ptrdiff_t>(it - h.times.begin() - 1, 0));
      const double span = h.times[static_cast<std::size_t>(hi)] - h.times[static_cast<std::size_t>(lo)];
      const double f = span > 0.0 ? std::clamp((t - h.times[static_cast<std::size_t>(lo)]) / span, 0.0, 1.0) : 0.0;
      std::vector<double> costs(static_cast<std::size_t>(st.net.link_count()));
      for (int a = 0; a < st.net.link_count(); ++a)
        costs[static_cast<std::size_t>(a)] = (1 - f) * h.costs(lo, a) + f * h.costs(hi, a);
      out.rows = logit_splits(st.net, dest, costs, policy.logit);
      break;
    }
    case PolicyKind::simplified_forecast: {
      const int row = std::min(step, st.completed);
      if (row < 1) {
        out.rows = statics();
        out.fallback_used = true;
        break;
      }
      std::vector<double> costs(static_cast<std::size_t>(st.net.link_count()));
      for (int a = 0; a < st.net.link_count(); ++a)
        costs[static_cast<std::size_t>(a)] = forecast_link_time(st, a, row, policy.forecast_horizon);
      out.rows = logit_splits(st.net, dest, costs, policy.logit);
      break;
    }
    case PolicyKind::local: {
      const auto costs = frozen_costs(st, t);
      const auto& viable = st.net.viable_links(dest);
      // Cheapest continuation within r further links (0 at the destination
      // or when the radius is used up).
      std::map<std::pair<NodeId, int>, double> memo;
      auto ahead = [&](auto&& self, NodeId v, int r) -> double {
        if (v == dest || r == 0) return 0.0;
        auto key = std::make_pair(v, r);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
        double best = std::numeric_limits<double>::infinity();
        for (LinkIndex a : st.net.out_links(v))
          if (viable[static_cast<std::size_t>(a)])
            best = std::min(best, costs[static_cast<std::size_t>(a)] + self(self, st.net.link(a).head, r - 1));
        return memo[key] = best;
      };
      out.rows = statics();
      for (auto& [v, row] : out.rows) {
        const auto& outs = st.net.out_links(v);
        Eigen::ArrayXd local = Eigen::ArrayXd::Zero(row.size());
        for (std::size_t i = 0; i < outs.size(); ++i)
          if (viable[static_cast<std::size_t>(outs[i])])
            local(static_cast<Eigen::Index>(i)) =
                costs[static_cast<std::size_t>(outs[i])] + ahead(ahead, st.net.link(outs[i]).head, policy.lookahead - 1);
        const double base = (row > 0.0).select(local, std::numeric_limits<double>::infinity()).minCoeff();
        if (!std::isfinite(base)) continue;
        Eigen::ArrayXd w = (row > 0.0).select(row * (-policy.logit.beta * (local - base)).exp(), 0.0);
        row = w / w.sum();
      }
      break;
    }
    case PolicyKind::ex_ante: {
      if (memory) {
        auto it = memory->frozen.find(commodity);
        if (it != memory->frozen.end()) {
          out.rows = it->second;
          break;
        }
      }
      if (t + 1e-12 < policy.departure_time) {
        out.rows = statics();
        break;
      }
      out.rows = logit_splits(st.net, dest, frozen_costs(st, t), policy.logit);
      if (memory) memory->frozen[commodity] = out.rows;
      break;
    }
  }
  return out;
}

SplitController make_policy_controller(const std::vector<std::optional<RoutingPolicy>>& policies,
                                       const SplitSchedule& static_splits, PolicyMemory& memory, int* fallback_steps) {
  SplitController ctl;
  for (const auto& p : policies) ctl.controls.push_back(p.has_value());
  ctl.rows = [policies, &static_splits, &memory, fallback_steps](const NetworkState& st, int step, int k) {
    auto decision = compute_splits(*policies[static_cast<std::size_t>(k)], st, static_splits, step, k, &memory);
    if (decision.fallback_used && fallback_steps) ++*fallback_steps;
    return decision.rows;
  };
  return ctl;
}

double first_departure(const SourceSchedule& sources, int commodity) {
  double first = std::numeric_limits<double>::infinity();
  for (const auto& [key, f] : sources.entries())
    if (std::get<2>(key) == commodity)
      for (const auto& p : f.pieces())
        if (p.t_end > p.t_start && (p.value > 0.0 || p.slope > 0.0)) first = std::min(first, p.t_start);
  return first;
}

std::vector<double> path_shares(const NetworkState& st, int step, const std::vector<std::vector<LinkIndex>>& paths,
                                NodeId origin, const std::vector<int>& commodities) {
  const auto& origin_outs = st.net.out_links(origin);
  std::vector<double> weights;
  for (int k : commodities) {
    double w = 0.0;
    for (LinkIndex a : origin_outs) w += st.links[static_cast<std::size_t>(a)].inflow(step, k);
    weights.push_back(w);
  }
  double total_weight = 0.0;
  for (double w : weights) total_weight += w;
  std::vector<double> shares(paths.size(), 0.0);
  for (std::size_t c = 0; c < commodities.size(); ++c) {
    const int k = commodities[c];
    const double weight = total_weight > 0.0 ? weights[c] / total_weight : 1.0 / static_cast<double>(commodities.size());
    if (weight == 0.0) continue;
    for (std::size_t p = 0; p < paths.size(); ++p) {
      double share = 1.0;
      for (std::size_t i = 0; i < paths[p].size(); ++i) {
        const LinkIndex a = paths[p][i];
        const NodeId v = st.net.link(a).tail;
        const auto& outs = st.net.out_links(v);
        const auto pos = static_cast<Eigen::Index>(std::find(outs.begin(), outs.end(), a) - outs.begin());
        if (i == 0 && weights[c] > 0.0) {
          share *= st.links[static_cast<std::size_t>(a)].inflow(step, k) / weights[c];
        } else {
          share *= st.theta[static_cast<std::size_t>(st.net.node_index(v))][static_cast<std::size_t>(k)](step, pos);
        }
      }
      shares[p] += weight * share;
    }
  }
  return shares;
}

double wardrop_gap(const NetworkState& st, double t, NodeId origin, NodeId destination, double used_threshold,
                   const std::vector<int>& commodities) {
  const auto times = instantaneous_path_times(st, t, origin, destination);
  std::vector<std::vector<LinkIndex>> paths;
  for (const auto& p : times) paths.push_back(p.links);
  const int step = std::clamp(static_cast<int>(t / st.dt()), 0, std::max(st.completed - 1, 0));
  const auto shares = path_shares(st, step, paths, origin, commodities);
  double fastest = std::numeric_limits<double>::infinity();
  for (const auto& p : times) fastest = std::min(fastest, p.time);
  double gap = 0.0;
  for (std::size_t p = 0; p < times.size(); ++p)
    if (shares[p] > used_threshold) gap = std::max(gap, times[p].time - fastest);
  return gap;
}

EquilibriumResult equilibrium_iterate(const EquilibriumSetup& setup) {
  const double alpha = setup.routed_fraction;
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::InvalidScenario, "routed fraction must be in [0, 1]");
  if (setup.rounds < 1) throw Error(Errc::InvalidScenario, "need at least one round");
  NetworkScenario sc = setup.base;
  const RoadNetwork& net = sc.net;
  const NodeId dest = setup.destination;
  const NodeId origin = net.link(setup.entry_link).tail;
  sc.commodities = {{UserClass::non_routed, dest}, {UserClass::routed, dest}};
  SplitSchedule splits;
  for (const auto& [key, f] : setup.base.splits.entries()) {
    if (std::get<2>(key) != 0) continue;
    splits.set(std::get<0>(key), std::get<1>(key), 0, f);
    splits.set(std::get<0>(key), std::get<1>(key), 1, f);
  }
  sc.splits = splits;
  sc.sources = SourceSchedule{};
  auto scaled = [&](double factor) {
    std::vector<SchedulePiece> pieces;
    for (auto p : setup.demand.pieces()) {
      p.value *= factor;
      p.slope *= factor;
      pieces.push_back(p);
    }
    return PiecewiseSchedule(pieces);
  };
  if (alpha < 1.0) sc.sources.set(origin, setup.entry_link, 0, scaled(1.0 - alpha));
  if (alpha > 0.0) sc.sources.set(origin, setup.entry_link, 1, scaled(alpha));
  setup.non_routed.validate(net, dest);
  setup.routed.validate(net, dest);

  const int steps = sc.steps;
  const double dt = sc.horizon / steps;
  std::vector<std::map<NodeId, Eigen::ArrayXd>> routed_rows(static_cast<std::size_t>(steps));
  for (int n = 0; n < steps; ++n) routed_rows[static_cast<std::size_t>(n)] = static_rows(net, splits, 1, dest, n * dt, (n + 1) * dt);
  const Eigen::ArrayXd demand = setup.demand.step_averages(sc.horizon, steps);

  RoutingPolicy non_routed = setup.non_routed;
  if (non_routed.kind == PolicyKind::ex_ante) non_routed.departure_time = first_departure(sc.sources, 0);
  RoutingPolicy routed = setup.routed;
  if (routed.kind == PolicyKind::ex_ante) routed.departure_time = first_departure(sc.sources, 1);

  EquilibriumResult result;
  for (int r = 0; r < setup.rounds; ++r) {
    PolicyMemory memory;
    SplitController ctl;
    ctl.controls = {non_routed.kind != PolicyKind::static_splits, true};
    ctl.rows = [&](const NetworkState& so_far, int step, int k) {
      if (k == 1) return routed_rows[static_cast<std::size_t>(step)];
      return compute_splits(non_routed, so_far, splits, step, 0, &memory).rows;
    };
    NetworkState st = simulate(sc, &ctl);

    double gap_sum = 0.0, time_sum = 0.0;
    int counted = 0;
    for (int n = 0; n < steps; ++n) {
      if (demand(n) <= 0.0) continue;
      const double t = n * dt;
      gap_sum += wardrop_gap(st, t, origin, dest, setup.used_threshold, {0, 1});
      double fastest = std::numeric_limits<double>::infinity();
      for (const auto& p : instantaneous_path_times(st, t, origin, dest)) fastest = std::min(fastest, p.time);
      time_sum += fastest;
      ++counted;
    }
    result.gaps.push_back(counted ? gap_sum / counted : 0.0);
    result.min_path_times.push_back(counted ? time_sum / counted : 0.0);

    PolicyMemory response_memory;
    const double w = 1.0 / (r + 2);
    for (int n = 0; n < steps; ++n) {
      const auto response = compute_splits(routed, st, splits, n, 1, &response_memory).rows;
      auto& current = routed_rows[static_cast<std::size_t>(n)];
      for (const auto& [v, row] : response) {
        auto it = current.find(v);
        if (it == current.end()) current[v] = row;
        else it->second = (1 - w) * it->second + w * row;
      }
    }
    if (setup.keep_states) result.states.push_back(st);
    if (r + 1 == setup.rounds) result.final_state = std::move(st);
  }
  return result;
}

}  // namespace mobility
