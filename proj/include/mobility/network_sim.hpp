#pragma once

#include "mobility/network.hpp"
#include "mobility/nonlocal_solver.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <map>
#include <vector>

namespace mobility {

struct LinkModel {
  VelocityLaw law = inverse_speed(1.0, 1.0);
  NonlocalWindow window = NonlocalWindow::whole();
};

struct NetworkScenario {
  RoadNetwork net;
  std::vector<Commodity> commodities;
  /// One model per link; a single entry is shared by all links.
  std::vector<LinkModel> models{LinkModel{}};
  SplitSchedule splits;
  SourceSchedule sources;
  /// rho0[link][commodity] cell averages; missing entries mean zero.
  std::vector<std::vector<Eigen::ArrayXd>> rho0;
  double horizon = 1.0;
  int steps = 100;
  SolverOptions solver;

  const LinkModel& model(LinkIndex a) const {
    return models.size() == 1 ? models.front() : models.at(static_cast<std::size_t>(a));
  }
};

/// Solution record of one link. Density rows are times t_n, n = 0..steps;
/// flux rows are step averages over [t_n, t_{n+1}).
struct LinkRecord {
  std::vector<Eigen::ArrayXXd> rho;  // per commodity
  Eigen::ArrayXXd aggregate;
  Eigen::ArrayXXd inflow;   // steps x K
  Eigen::ArrayXXd outflow;  // steps x K
  /// Nonlocal argument: whole-link windows store one column (the link
  /// mass); other windows store W at the N + 1 cell interfaces.
  Eigen::ArrayXXd W;
};

class NetworkState {
 public:
  RoadNetwork net;
  std::vector<Commodity> commodities;
  std::vector<LinkModel> models;
  double horizon = 0.0;
  int steps = 0;
  int cells = 0;
  /// Steps already simulated; rows 0..completed of densities are filled.
  int completed = 0;
  std::vector<LinkRecord> links;
  Eigen::ArrayXXd arrivals;  // steps x K, rate reaching each destination
  Eigen::ArrayXXd injected;  // steps x K, total source rate
  /// Realized split rows per node (position in net.nodes()) and commodity:
  /// steps x out-degree.
  std::vector<std::vector<Eigen::ArrayXXd>> theta;

  double dt() const noexcept { return horizon / steps; }
  const LinkModel& model(LinkIndex a) const {
    return models.size() == 1 ? models.front() : models.at(static_cast<std::size_t>(a));
  }
  /// Nonlocal argument at (t, x), linear in time between stored rows.
  double nonlocal_at(LinkIndex a, double t, double x) const;
  /// lambda_a(t, W_a(t, x)).
  double speed(LinkIndex a, double t, double x) const;
  double link_mass(LinkIndex a, int row) const;
  /// Mass of commodity k on all links at row n.
  double commodity_mass(int k, int row) const;
};

/// Supplies split rows for commodities routed by a policy at run time. Called
/// once per step and controlled commodity with the state simulated so far;
/// returns rows keyed by node (entries in out_links order).
struct SplitController {
  std::vector<bool> controls;  // per commodity
  std::function<std::map<NodeId, Eigen::ArrayXd>(const NetworkState& so_far, int step, int commodity)> rows;
};

NetworkState simulate(const NetworkScenario& scenario, const SplitController* controller = nullptr);

struct MassBalance {
  double initial = 0.0;
  double injected = 0.0;
  double exited = 0.0;
  double stored = 0.0;
  /// (initial + injected - exited - stored) / max(1, initial + injected).
  double relative_residual() const;
};

std::vector<MassBalance> mass_balance(const NetworkState& state);

/// Exit time of a parcel entering the first link at `entry_time`, chained
/// over the path; throws HorizonExceeded if it has not left by the horizon.
double travel_time(const NetworkState& state, const std::vector<LinkIndex>& path, double entry_time);

/// All paths from origin to destination (the network is acyclic, so every
/// path is simple). Throws NoPath or PathLimitExceeded.
std::vector<std::vector<LinkIndex>> enumerate_paths(const RoadNetwork& net, NodeId origin, NodeId destination,
                                                    std::size_t cap = 64);

struct PathTime {
  std::vector<LinkIndex> links;
  double time = 0.0;
};

/// Time to cross one link with conditions frozen at t: integral of 1/lambda
/// over x (equal to 1/lambda for whole-link windows).
double frozen_link_time(const NetworkState& state, LinkIndex a, double t);

std::vector<PathTime> instantaneous_path_times(const NetworkState& state, double t, NodeId origin,
                                               NodeId destination, std::size_t cap = 64);

/// Columns t,x,rho for one link and commodity.
void write_link_csv(std::ostream& os, const NetworkState& state, LinkIndex a, int commodity, int time_stride = 1);
/// Columns t,link,commodity,inflow,outflow.
void write_flux_csv(std::ostream& os, const NetworkState& state);

}  // namespace mobility
