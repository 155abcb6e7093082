#pragma once

#include "mobility/network_sim.hpp"

#include <Eigen/Core>

#include <map>
#include <vector>

namespace mobility {

/// Total demand d per (node, outgoing link, commodity), in vehicles.
struct DemandSpec {
  std::map<LinkTimeTable::Key, double> demand;

  /// Total demand of every commodity heading to `destination` in `cls`.
  double total(const std::vector<Commodity>& commodities, NodeId destination, UserClass cls) const;
};

/// Backlog functional: over destinations and user classes, the left Riemann
/// sum on the simulation grid of (total demand - cumulative arrivals)^2.
double backlog_objective(const NetworkState& state, const DemandSpec& demand);

/// Scales a nonnegative rate trajectory so that sum(rates * lengths) equals
/// `demand`; an all-zero proposal becomes the uniform rate demand / T.
/// Negative entries are clipped to zero first.
Eigen::ArrayXd project_demand(const Eigen::ArrayXd& rates, const Eigen::ArrayXd& interval_lengths, double demand);

/// Euclidean projection onto the probability simplex restricted to entries
/// with allowed[i]; other entries are zero.
Eigen::ArrayXd project_simplex(const Eigen::ArrayXd& v, const std::vector<bool>& allowed);

/// Piecewise-constant controls on P time intervals.
struct ControlParameterization {
  struct SplitControl {
    NodeId node = 0;
    int commodity = 0;
    Eigen::ArrayXXd values;  // P x out-degree
  };
  struct SourceControl {
    NodeId node = 0;
    LinkIndex link = 0;
    int commodity = 0;
    Eigen::ArrayXd rates;  // P
  };

  std::vector<double> knots;  // P + 1 times from 0 to the horizon
  std::vector<SplitControl> splits;
  std::vector<SourceControl> sources;

  int intervals() const { return static_cast<int>(knots.size()) - 1; }
  Eigen::ArrayXd interval_lengths() const;
  int dimension() const;
  Eigen::ArrayXd flatten() const;
  void unflatten(const Eigen::ArrayXd& x);

  /// Rows onto the simplex of viable links, source trajectories onto their
  /// demand.
  void project(const NetworkScenario& scenario, const DemandSpec& demand);
  /// Writes the controls into the scenario's split and source schedules.
  void apply(NetworkScenario& scenario) const;
};

struct SocialOptions {
  double fd_step = 1e-3;
  double initial_step = 0.1;
  double min_step = 1e-6;
  double max_step = 1.0;
  int threads = 1;
};

struct SocialTraceEntry {
  int simulations = 0;
  double objective = 0.0;
  double mean_step = 0.0;
};

struct SocialResult {
  ControlParameterization best;
  double objective = 0.0;
  std::vector<SocialTraceEntry> trace;  // accepted iterates, nonincreasing
  int simulations = 0;
  bool budget_exhausted = false;
  /// The search is local; the result may be a local minimum.
  bool local_minimum_only = true;
};

/// Objective of the scenario with the controls applied (one simulation).
double evaluate_controls(const NetworkScenario& base, const DemandSpec& demand, const ControlParameterization& controls);

/// Projected coordinate descent with central finite differences; `budget`
/// caps the number of simulations. Running out of budget is reported in the
/// result, not thrown.
SocialResult optimize_social(const NetworkScenario& base, const DemandSpec& demand, ControlParameterization controls,
                             int budget, const SocialOptions& options = {});

}  // namespace mobility
