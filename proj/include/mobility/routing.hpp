#pragma once

#include "mobility/network_sim.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mobility {

enum class PolicyKind {
  // non-routed users
  static_splits,
  ex_ante,
  local,
  sub_network,
  // routed users
  full_information,
  delayed,
  incentivized,
  database,
  simplified_forecast,
};

std::string to_string(PolicyKind kind);
/// Accepts the names produced by to_string; throws InvalidScenario.
PolicyKind policy_kind_from_string(const std::string& name);

/// Path choice probability proportional to exp(-beta * path cost).
struct LogitRule {
  double beta = 1.0;
};

/// Historical link costs on a time grid, used by the database policy.
struct CostTable {
  std::vector<double> times;  // increasing
  Eigen::ArrayXXd costs;      // times.size() x links
};

struct RoutingPolicy {
  PolicyKind kind = PolicyKind::static_splits;
  LogitRule logit;
  double delay = 0.0;             // delayed
  int lookahead = 1;              // local: links ahead taken into account
  std::vector<bool> mask;         // sub_network: allowed links
  double forecast_horizon = 0.0;  // simplified_forecast
  double congestion_weight = 0.0; // incentivized: cost = time + w * W
  CostTable history;              // database
  double departure_time = 0.0;    // ex_ante: rows are frozen at this time

  /// Throws InvalidScenario for parameters that do not fit the kind.
  void validate(const RoadNetwork& net, NodeId destination) const;
};

struct SplitDecision {
  std::map<NodeId, Eigen::ArrayXd> rows;
  /// Set when the policy lacked data (history, delay) and used the static
  /// rows instead.
  bool fallback_used = false;
};

/// Frozen rows of ex_ante policies, per commodity.
struct PolicyMemory {
  std::map<int, std::map<NodeId, Eigen::ArrayXd>> frozen;
};

/// Junction splits reproducing path probabilities proportional to
/// exp(-beta * sum of link costs): theta_a = exp(-beta c_a) Z(head) / Z(v),
/// with Z(v) summed over all paths from v. Only links with mask[a] (all if
/// empty) that can reach the destination take part; nodes without such a
/// link get no row.
std::map<NodeId, Eigen::ArrayXd> logit_splits(const RoadNetwork& net, NodeId destination,
                                              const std::vector<double>& link_costs, const LogitRule& rule,
                                              const std::vector<bool>& mask = {});

/// Split rows for every junction at step `step` for `commodity`, using the
/// state simulated up to that step.
SplitDecision compute_splits(const RoutingPolicy& policy, const NetworkState& so_far, const SplitSchedule& static_splits,
                             int step, int commodity, PolicyMemory* memory = nullptr);

/// Split controller for simulate(): commodities with a policy are routed by
/// it; others use the schedule. `fallback_steps` (optional) counts steps
/// that fell back to static rows.
SplitController make_policy_controller(const std::vector<std::optional<RoutingPolicy>>& policies,
                                       const SplitSchedule& static_splits, PolicyMemory& memory,
                                       int* fallback_steps = nullptr);

/// Earliest time at which commodity k has a positive source.
double first_departure(const SourceSchedule& sources, int commodity);

/// Share of the flow of `commodities` leaving `origin` at step n that takes
/// each path, from realized splits (and source shares at the origin).
std::vector<double> path_shares(const NetworkState& state, int step, const std::vector<std::vector<LinkIndex>>& paths,
                                NodeId origin, const std::vector<int>& commodities);

/// max over used paths (share > threshold) of frozen time minus the minimum
/// frozen time over all paths.
double wardrop_gap(const NetworkState& state, double t, NodeId origin, NodeId destination, double used_threshold,
                   const std::vector<int>& commodities);

struct EquilibriumSetup {
  NetworkScenario base;  // network, link models, grid, static splits for commodity 0
  LinkIndex entry_link = 0;
  PiecewiseSchedule demand;  // total departure rate onto entry_link
  NodeId destination = 0;
  double routed_fraction = 0.0;
  RoutingPolicy non_routed;
  RoutingPolicy routed = [] {
    RoutingPolicy p;
    p.kind = PolicyKind::full_information;
    return p;
  }();
  int rounds = 10;
  double used_threshold = 0.01;
  bool keep_states = false;
};

struct EquilibriumResult {
  /// Per round: time-averaged gap over steps with positive demand.
  std::vector<double> gaps;
  /// Per round: mean frozen time of the fastest path over the same steps.
  std::vector<double> min_path_times;
  std::vector<NetworkState> states;  // only with keep_states
  NetworkState final_state;
};

/// Day-to-day iteration. Commodity 0 is non-routed, commodity 1 routed,
/// with demand split (1 - alpha, alpha). Each round simulates the day with
/// the routed rows of the previous round, then moves them towards the
/// policy's response to that day by the method of successive averages.
EquilibriumResult equilibrium_iterate(const EquilibriumSetup& setup);

}  // namespace mobility
