#pragma once

#include "mobility/rng.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mobility {

/// Abstract freight network: hubs and directed edges with a platooning
/// weight and an integer dwell (time steps spent on the edge).
struct FreightGraph {
  struct Edge {
    int from = 0, to = 0;
    double weight = 1.0;
    int dwell = 1;
  };
  std::vector<std::string> hubs;
  std::vector<Edge> edges;

  int hub(const std::string& name) const;
  /// Index of the edge from -> to; throws InvalidScenario if absent.
  int edge(int from, int to) const;
  void validate() const;
};

/// A vehicle's nominal walk: walk[k] is the edge occupied at step start + k.
struct VehicleAssignment {
  int start = 0;
  std::vector<int> walk;
  int tau_low = 0, tau_high = 0;
  /// Delay cost h(tau) for tau = tau_low..tau_high; empty means zero.
  std::vector<double> delay_cost;

  /// Expands a hub path with the edges' dwell times.
  static VehicleAssignment from_hubs(const FreightGraph& g, const std::vector<int>& hubs, int start, int tau_low,
                                     int tau_high);
  int window() const { return tau_high - tau_low + 1; }
  double h(int tau) const { return delay_cost.empty() ? 0.0 : delay_cost[static_cast<std::size_t>(tau - tau_low)]; }
};

using Delays = std::vector<int>;

struct SchedulingGame {
  FreightGraph graph;
  std::vector<VehicleAssignment> vehicles;
  int horizon = 1;  // steps 0..horizon-1
  double gamma = 1.0;
  /// f(z) for z = 0, 1, ...; empty means f(z) = z^2.
  std::vector<double> reward;

  double f(int z) const;
  int size() const { return static_cast<int>(vehicles.size()); }
  void validate() const;
  /// Throws InfeasibleDelay if some delay lies outside its window.
  void check_delays(const Delays& tau) const;
  Delays earliest() const;
};

/// Vehicles per (step, edge) with every walk shifted by its delay; steps
/// outside the horizon are dropped. `exclude` leaves one vehicle out.
Eigen::ArrayXXi occupancy(const SchedulingGame& game, const Delays& tau, int exclude = -1);

/// -gamma * sum_t sum_e w_e f(count).
double platoon_term(const SchedulingGame& game, const Eigen::ArrayXXi& counts);

/// sum_i h_i(tau_i) + platoon term.
double coordination_cost(const SchedulingGame& game, const Delays& tau);

/// g(tau', tau_-i) from the counts of the other vehicles (zeta), vehicle i
/// placed with delay tau'. The same routine serves the plaintext and the
/// encrypted protocols so both produce identical numbers.
double price_from_counts(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i, int tau_prime);

/// g(tau', tau_-i) for every tau' in vehicle i's window.
std::vector<double> price_function(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i);

struct BruteForceResult {
  Delays tau;
  double cost = 0.0;
  std::int64_t evaluated = 0;
};

/// Exhaustive search; ties go to the lexicographically smallest delays.
/// Throws InstanceTooLarge beyond `limit` joint configurations.
BruteForceResult brute_force_schedule(const SchedulingGame& game, std::int64_t limit = 1'000'000);

/// Log-linear resampling law of vehicle i over its window given zeta
/// (max-subtracted before exponentiation).
std::vector<double> update_probabilities(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i,
                                         double temperature);

/// Supplies zeta (counts of all vehicles except i) for the current delays.
using CountSource = std::function<Eigen::ArrayXXi(const Delays& tau, int i)>;

/// One log-linear update: a uniformly drawn vehicle resamples its delay with
/// probability proportional to exp(-(h + g) / temperature). Returns the
/// updated vehicle.
int log_linear_step(const SchedulingGame& game, Delays& tau, double temperature, Rng& rng,
                    const CountSource* source = nullptr);

struct LearningResult {
  std::vector<Delays> trajectory;  // iterations + 1 states when recorded
  std::vector<double> costs;       // cost after each state
  std::map<Delays, std::int64_t> visits;
  Delays best;
  double best_cost = 0.0;
};

struct LearningOptions {
  bool record_trajectory = true;
  bool count_visits = true;
};

LearningResult run_learning(const SchedulingGame& game, const Delays& tau0, double temperature,
                            std::int64_t iterations, std::uint64_t seed, const LearningOptions& options = {},
                            const CountSource* source = nullptr);

/// Exact stationary law exp(-Phi / temperature) / Z by enumeration.
std::map<Delays, double> gibbs_distribution(const SchedulingGame& game, double temperature,
                                            std::int64_t limit = 1'000'000);

double total_variation(const std::map<Delays, std::int64_t>& visits, const std::map<Delays, double>& law);

struct PotentialCheck {
  double delta_potential = 0.0;  // Phi(tau) - Phi(tau') from full evaluations
  double delta_utility = 0.0;    // U_i(tau_i) - U_i(tau'_i) from zeta
};

PotentialCheck potential_check(const SchedulingGame& game, const Delays& tau, int i, int tau_prime);

/// Per edge: distance d -> number of vehicle pairs whose (shifted) first
/// arrival steps on the edge differ by d.
std::vector<std::map<int, std::int64_t>> pair_distance_histogram(const SchedulingGame& game, const Delays& tau);

/// Per edge: distance -> scheduled / baseline count; 0/0 is omitted.
std::vector<std::map<int, double>> distance_ratio(const std::vector<std::map<int, std::int64_t>>& scheduled,
                                                  const std::vector<std::map<int, std::int64_t>>& baseline);

/// (sum of distance-0 pairs scheduled) / (sum baseline) - 1. A platooning
/// proxy, not a fuel model.
double platooning_proxy(const std::vector<std::map<int, std::int64_t>>& scheduled,
                        const std::vector<std::map<int, std::int64_t>>& baseline);

/// Groups of vehicles whose shifted walks can share a (step, edge) cell for
/// some delays in their windows.
std::vector<std::vector<int>> decompose(const SchedulingGame& game);

struct SwedenConfig {
  int max_delay = 3;
  int kiruna_vehicles = 40;
  int ostersund_vehicles = 40;
  double gamma = 1.0;
};

/// Five-minute steps; Kiruna-Stockholm departures spread over 00:00-02:00,
/// Ostersund-Malmo departures over 07:00-09:00; weights equal to dwell.
SchedulingGame build_sweden_scenario(const SwedenConfig& config = {});

/// Edge indices of the Kiruna-Stockholm corridor in travel order.
std::vector<int> kiruna_stockholm_edges(const SchedulingGame& sweden);

}  // namespace mobility
