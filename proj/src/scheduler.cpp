#include "mobility/scheduler.hpp"

#include "mobility/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mobility {

int FreightGraph::hub(const std::string& name) const {
  auto it = std::find(hubs.begin(), hubs.end(), name);
  if (it == hubs.end()) throw Error(Errc::InvalidScenario, "unknown hub " + name);
  return static_cast<int>(it - hubs.begin());
}

int FreightGraph::edge(int from, int to) const {
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (edges[e].from == from && edges[e].to == to) return static_cast<int>(e);
  throw Error(Errc::InvalidScenario, "no edge " + std::to_string(from) + " -> " + std::to_string(to));
}

void FreightGraph::validate() const {
  const int n = static_cast<int>(hubs.size());
  for (const auto& e : edges) {
    if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n)
      throw Error(Errc::InvalidScenario, "edge endpoint is not a hub");
    if (!(e.weight > 0)) throw Error(Errc::InvalidScenario, "edge weights must be positive");
    if (e.dwell < 1) throw Error(Errc::InvalidScenario, "edge dwell must be at least one step");
  }
}

VehicleAssignment VehicleAssignment::from_hubs(const FreightGraph& g, const std::vector<int>& hubs, int start,
                                               int tau_low, int tau_high) {
  VehicleAssignment v;
  v.start = start;
  v.tau_low = tau_low;
  v.tau_high = tau_high;
  for (std::size_t k = 0; k + 1 < hubs.size(); ++k) {
    const int e = g.edge(hubs[k], hubs[k + 1]);
    v.walk.insert(v.walk.end(), static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].dwell), e);
  }
  return v;
}

double SchedulingGame::f(int z) const {
  if (reward.empty()) return static_cast<double>(z) * z;
  if (z >= static_cast<int>(reward.size())) throw Error(Errc::InvalidScenario, "reward table too short for " + std::to_string(z));
  return reward[static_cast<std::size_t>(z)];
}

void SchedulingGame::validate() const {
  graph.validate();
  if (horizon < 1) throw Error(Errc::InvalidScenario, "horizon must be positive");
  if (!reward.empty() && static_cast<int>(reward.size()) < size() + 1)
    throw Error(Errc::InvalidScenario, "reward table needs entries for 0..number of vehicles");
  const int E = static_cast<int>(graph.edges.size());
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    const std::string who = "vehicle " + std::to_string(i);
    if (v.tau_low < 0 || v.tau_high < v.tau_low) throw Error(Errc::InfeasibleDelay, who + " has an empty delay window");
    if (!v.delay_cost.empty() && static_cast<int>(v.delay_cost.size()) != v.window())
      throw Error(Errc::InvalidScenario, who + " delay costs do not cover its window");
    for (std::size_t k = 0; k < v.walk.size(); ++k) {
      if (v.walk[k] < 0 || v.walk[k] >= E) throw Error(Errc::InvalidScenario, who + " uses an unknown edge");
      if (k > 0 && v.walk[k] != v.walk[k - 1] &&
          graph.edges[static_cast<std::size_t>(v.walk[k - 1])].to != graph.edges[static_cast<std::size_t>(v.walk[k])].from)
        throw Error(Errc::InvalidScenario, who + " walk is not connected");
    }
  }
}

void SchedulingGame::check_delays(const Delays& tau) const {
  if (static_cast<int>(tau.size()) != size()) throw Error(Errc::DimensionMismatch, "one delay per vehicle required");
  for (int i = 0; i < size(); ++i) {
    const auto& v = vehicles[static_cast<std::size_t>(i)];
    const int t = tau[static_cast<std::size_t>(i)];
    if (t < v.tau_low || t > v.tau_high)
      throw Error(Errc::InfeasibleDelay, "delay " + std::to_string(t) + " of vehicle " + std::to_string(i) +
                                              " outside [" + std::to_string(v.tau_low) + ", " +
                                              std::to_string(v.tau_high) + "]");
  }
}

Delays SchedulingGame::earliest() const {
  Delays tau;
  for (const auto& v : vehicles) tau.push_back(v.tau_low);
  return tau;
}

namespace {

template <typename Visit>
void for_each_cell(const SchedulingGame& game, int i, int tau, Visit&& visit) {
  const auto& v = game.vehicles[static_cast<std::size_t>(i)];
  for (std::size_t k = 0; k < v.walk.size(); ++k) {
    const int t = v.start + static_cast<int>(k) + tau;
    if (t >= 0 && t < game.horizon) visit(t, v.walk[k]);
  }
}

}  // namespace

Eigen::ArrayXXi occupancy(const SchedulingGame& game, const Delays& tau, int exclude) {
  Eigen::ArrayXXi counts = Eigen::ArrayXXi::Zero(game.horizon, static_cast<Eigen::Index>(game.graph.edges.size()));
  for (int i = 0; i < game.size(); ++i)
    if (i != exclude) for_each_cell(game, i, tau[static_cast<std::size_t>(i)], [&](int t, int e) { ++counts(t, e); });
  return counts;
}

double platoon_term(const SchedulingGame& game, const Eigen::ArrayXXi& counts) {
  double sum = 0.0;
  for (Eigen::Index t = 0; t < counts.rows(); ++t)
    for (Eigen::Index e = 0; e < counts.cols(); ++e)
      sum += game.graph.edges[static_cast<std::size_t>(e)].weight * game.f(counts(t, e));
  return -game.gamma * sum;
}

double coordination_cost(const SchedulingGame& game, const Delays& tau) {
  game.check_delays(tau);
  double h = 0.0;
  for (int i = 0; i < game.size(); ++i) h += game.vehicles[static_cast<std::size_t>(i)].h(tau[static_cast<std::size_t>(i)]);
  return h + platoon_term(game, occupancy(game, tau));
}

double price_from_counts(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i, int tau_prime) {
  Eigen::ArrayXXi own = Eigen::ArrayXXi::Zero(zeta.rows(), zeta.cols());
  for_each_cell(game, i, tau_prime, [&](int t, int e) { ++own(t, e); });
  return platoon_term(game, zeta + own);
}

std::vector<double> price_function(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i) {
  const auto& v = game.vehicles[static_cast<std::size_t>(i)];
  std::vector<double> g;
  for (int tau = v.tau_low; tau <= v.tau_high; ++tau) g.push_back(price_from_counts(game, zeta, i, tau));
  return g;
}

namespace {

std::int64_t joint_states(const SchedulingGame& game, std::int64_t limit) {
  std::int64_t count = 1;
  for (const auto& v : game.vehicles) {
    count *= v.window();
    if (count > limit)
      throw Error(Errc::InstanceTooLarge, "more than " + std::to_string(limit) + " joint delay configurations");
  }
  return count;
}

// Lexicographic successor within the windows; false after the last one.
bool next_delays(const SchedulingGame& game, Delays& tau) {
  for (int i = game.size() - 1; i >= 0; --i) {
    auto& t = tau[static_cast<std::size_t>(i)];
    if (t < game.vehicles[static_cast<std::size_t>(i)].tau_high) {
      ++t;
      return true;
    }
    t = game.vehicles[static_cast<std::size_t>(i)].tau_low;
  }
  return false;
}

}  // namespace

BruteForceResult brute_force_schedule(const SchedulingGame& game, std::int64_t limit) {
  game.validate();
  joint_states(game, limit);
  BruteForceResult best;
  Delays tau = game.earliest();
  do {
    const double c = coordination_cost(game, tau);
    ++best.evaluated;
    // Tolerance so rounding noise cannot override the lexicographic tie rule.
    if (best.tau.empty() || c < best.cost - 1e-12 * std::max(1.0, std::abs(best.cost))) {
      best.cost = c;
      best.tau = tau;
    }
  } while (next_delays(game, tau));
  return best;
}

std::vector<double> update_probabilities(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i,
                                         double temperature) {
  if (!(temperature > 0)) throw Error(Errc::InvalidScenario, "temperature must be positive");
  const auto& v = game.vehicles[static_cast<std::size_t>(i)];
  const std::vector<double> g = price_function(game, zeta, i);
  std::vector<double> p(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) p[k] = v.h(v.tau_low + static_cast<int>(k)) + g[k];
  const double lowest = *std::min_element(p.begin(), p.end());
  double total = 0.0;
  for (double& x : p) total += x = std::exp(-(x - lowest) / temperature);
  for (double& x : p) x /= total;
  return p;
}

int log_linear_step(const SchedulingGame& game, Delays& tau, double temperature, Rng& rng, const CountSource* source) {
  const int i = static_cast<int>(rng.index(static_cast<std::size_t>(game.size())));
  const Eigen::ArrayXXi zeta = source ? (*source)(tau, i) : occupancy(game, tau, i);
  const std::vector<double> p = update_probabilities(game, zeta, i, temperature);
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t pick = p.size() - 1;
  for (std::size_t k = 0; k < p.size(); ++k) {
    cumulative += p[k];
    if (u < cumulative) {
      pick = k;
      break;
    }
  }
  tau[static_cast<std::size_t>(i)] = game.vehicles[static_cast<std::size_t>(i)].tau_low + static_cast<int>(pick);
  return i;
}

LearningResult run_learning(const SchedulingGame& game, const Delays& tau0, double temperature,
                            std::int64_t iterations, std::uint64_t seed, const LearningOptions& options,
                            const CountSource* source) {
  game.validate();
  if (iterations < 1) throw Error(Errc::InvalidScenario, "iterations must be at least 1");
  Rng rng(seed);
  Delays tau = tau0;
  LearningResult out;
  auto record = [&] {
    const double c = coordination_cost(game, tau);
    if (options.record_trajectory) out.trajectory.push_back(tau);
    out.costs.push_back(c);
    if (options.count_visits) ++out.visits[tau];
    if (out.best.empty() || c < out.best_cost) {
      out.best = tau;
      out.best_cost = c;
    }
  };
  record();
  for (std::int64_t it = 0; it < iterations; ++it) {
    log_linear_step(game, tau, temperature, rng, source);
    record();
  }
  return out;
}

std::map<Delays, double> gibbs_distribution(const SchedulingGame& game, double temperature, std::int64_t limit) {
  game.validate();
  joint_states(game, limit);
  std::map<Delays, double> law;
  Delays tau = game.earliest();
  double lowest = std::numeric_limits<double>::infinity();
  do {
    const double c = coordination_cost(game, tau);
    law[tau] = c;
    lowest = std::min(lowest, c);
  } while (next_delays(game, tau));
  double z = 0.0;
  for (auto& [k, v] : law) z += v = std::exp(-(v - lowest) / temperature);
  for (auto& [k, v] : law) v /= z;
  return law;
}

double total_variation(const std::map<Delays, std::int64_t>& visits, const std::map<Delays, double>& law) {
  std::int64_t n = 0;
  for (const auto& [k, c] : visits) n += c;
  double tv = 0.0;
  for (const auto& [k, p] : law) {
    auto it = visits.find(k);
    tv += std::abs((it == visits.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(n)) - p);
  }
  for (const auto& [k, c] : visits)
    if (!law.count(k)) tv += static_cast<double>(c) / static_cast<double>(n);
  return 0.5 * tv;
}

PotentialCheck potential_check(const SchedulingGame& game, const Delays& tau, int i, int tau_prime) {
  game.check_delays(tau);
  Delays moved = tau;
  moved[static_cast<std::size_t>(i)] = tau_prime;
  game.check_delays(moved);
  const auto& v = game.vehicles[static_cast<std::size_t>(i)];
  const Eigen::ArrayXXi zeta = occupancy(game, tau, i);
  const int current = tau[static_cast<std::size_t>(i)];
  PotentialCheck out;
  out.delta_potential = coordination_cost(game, tau) - coordination_cost(game, moved);
  out.delta_utility = (v.h(current) + price_from_counts(game, zeta, i, current)) -
                      (v.h(tau_prime) + price_from_counts(game, zeta, i, tau_prime));
  return out;
}

std::vector<std::map<int, std::int64_t>> pair_distance_histogram(const SchedulingGame& game, const Delays& tau) {
  game.check_delays(tau);
  const std::size_t E = game.graph.edges.size();
  std::vector<std::vector<int>> arrivals(E);
  for (int i = 0; i < game.size(); ++i) {
    std::vector<bool> seen(E, false);
    for_each_cell(game, i, tau[static_cast<std::size_t>(i)], [&](int t, int e) {
      if (!seen[static_cast<std::size_t>(e)]) {
        seen[static_cast<std::size_t>(e)] = true;
        arrivals[static_cast<std::size_t>(e)].push_back(t);
      }
    });
  }
  std::vector<std::map<int, std::int64_t>> hist(E);
  for (std::size_t e = 0; e < E; ++e) {
    const auto& a = arrivals[e];
    for (std::size_t p = 0; p < a.size(); ++p)
      for (std::size_t q = p + 1; q < a.size(); ++q) ++hist[e][std::abs(a[p] - a[q])];
  }
  return hist;
}

std::vector<std::map<int, double>> distance_ratio(const std::vector<std::map<int, std::int64_t>>& scheduled,
                                                  const std::vector<std::map<int, std::int64_t>>& baseline) {
  if (scheduled.size() != baseline.size()) throw Error(Errc::DimensionMismatch, "histograms cover different edges");
  std::vector<std::map<int, double>> out(scheduled.size());
  for (std::size_t e = 0; e < scheduled.size(); ++e) {
    std::map<int, std::pair<std::int64_t, std::int64_t>> both;
    for (const auto& [d, c] : scheduled[e]) both[d].first = c;
    for (const auto& [d, c] : baseline[e]) both[d].second = c;
    for (const auto& [d, c] : both) {
      if (c.second > 0)
        out[e][d] = static_cast<double>(c.first) / static_cast<double>(c.second);
      else if (c.first > 0)
        out[e][d] = std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

double platooning_proxy(const std::vector<std::map<int, std::int64_t>>& scheduled,
                        const std::vector<std::map<int, std::int64_t>>& baseline) {
  auto zero_pairs = [](const std::vector<std::map<int, std::int64_t>>& h) {
    std::int64_t s = 0;
    for (const auto& m : h) {
      auto it = m.find(0);
      if (it != m.end()) s += it->second;
    }
    return s;
  };
  const std::int64_t base = zero_pairs(baseline);
  if (base == 0) throw Error(Errc::ComputeError, "baseline has no distance-0 pairs");
  return static_cast<double>(zero_pairs(scheduled)) / static_cast<double>(base) - 1.0;
}

std::vector<std::vector<int>> decompose(const SchedulingGame& game) {
  const int I = game.size();
  std::vector<int> parent(static_cast<std::size_t>(I));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
    return a;
  };
  const auto E = static_cast<Eigen::Index>(game.graph.edges.size());
  Eigen::ArrayXXi owner = Eigen::ArrayXXi::Constant(game.horizon, E, -1);
  for (int i = 0; i < I; ++i) {
    const auto& v = game.vehicles[static_cast<std::size_t>(i)];
    for (int tau = v.tau_low; tau <= v.tau_high; ++tau)
      for_each_cell(game, i, tau, [&](int t, int e) {
        int& o = owner(t, e);
        if (o < 0)
          o = i;
        else
          parent[static_cast<std::size_t>(find(o))] = find(i);
      });
  }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < I; ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups) out.push_back(members);
  std::sort(out.begin(), out.end());
  return out;
}

SchedulingGame build_sweden_scenario(const SwedenConfig& c) {
  SchedulingGame g;
  g.graph.hubs = {"Kiruna", "Lulea", "Umea", "Sundsvall", "Uppsala", "Stockholm", "Ostersund", "Helsingborg", "Malmo"};
  auto add = [&](const char* a, const char* b, int dwell) {
    g.graph.edges.push_back({g.graph.hub(a), g.graph.hub(b), static_cast<double>(dwell), dwell});
  };
  add("Kiruna", "Lulea", 48);
  add("Lulea", "Umea", 39);
  add("Umea", "Sundsvall", 39);
  add("Sundsvall", "Uppsala", 42);
  add("Uppsala", "Stockholm", 9);
  add("Ostersund", "Sundsvall", 30);
  add("Stockholm", "Helsingborg", 80);
  add("Helsingborg", "Malmo", 8);
  g.horizon = 288;  // one day
  g.gamma = c.gamma;
  auto path = [&](std::initializer_list<const char*> names) {
    std::vector<int> ids;
    for (const char* n : names) ids.push_back(g.graph.hub(n));
    return ids;
  };
  const auto north = path({"Kiruna", "Lulea", "Umea", "Sundsvall", "Uppsala", "Stockholm"});
  const auto west = path({"Ostersund", "Sundsvall", "Uppsala", "Stockholm", "Helsingborg", "Malmo"});
  // Departures spread uniformly over a two-hour (24-step) window.
  for (int i = 0; i < c.kiruna_vehicles; ++i)
    g.vehicles.push_back(VehicleAssignment::from_hubs(g.graph, north, i * 24 / c.kiruna_vehicles, 0, c.max_delay));
  for (int i = 0; i < c.ostersund_vehicles; ++i)
    g.vehicles.push_back(VehicleAssignment::from_hubs(g.graph, west, 84 + i * 24 / c.ostersund_vehicles, 0, c.max_delay));
  g.validate();
  return g;
}

std::vector<int> kiruna_stockholm_edges(const SchedulingGame& s) {
  const auto& gr = s.graph;
  return {gr.edge(gr.hub("Kiruna"), gr.hub("Lulea")), gr.edge(gr.hub("Lulea"), gr.hub("Umea")),
          gr.edge(gr.hub("Umea"), gr.hub("Sundsvall")), gr.edge(gr.hub("Sundsvall"), gr.hub("Uppsala")),
          gr.edge(gr.hub("Uppsala"), gr.hub("Stockholm"))};
}

}  // namespace mobility
