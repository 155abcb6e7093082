#include "mobility/network.hpp"

#include "mobility/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <string>

namespace mobility {

RoadNetwork::RoadNetwork(std::vector<NodeId> nodes, std::vector<Link> links)
    : nodes_(std::move(nodes)), links_(std::move(links)) {
  if (nodes_.empty()) throw Error(Errc::InvalidScenario, "network has no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!index_.emplace(nodes_[i], static_cast<int>(i)).second)
      throw Error(Errc::InvalidScenario, "duplicate node id " + std::to_string(nodes_[i]));
  in_.resize(nodes_.size());
  out_.resize(nodes_.size());
  for (std::size_t a = 0; a < links_.size(); ++a) {
    const auto& l = links_[a];
    if (!has_node(l.tail) || !has_node(l.head))
      throw Error(Errc::InvalidScenario, "link " + std::to_string(a) + " references an unknown node");
    out_[static_cast<std::size_t>(node_index(l.tail))].push_back(static_cast<LinkIndex>(a));
    in_[static_cast<std::size_t>(node_index(l.head))].push_back(static_cast<LinkIndex>(a));
  }
}

bool RoadNetwork::has_node(NodeId v) const { return index_.count(v) != 0; }

int RoadNetwork::node_index(NodeId v) const {
  auto it = index_.find(v);
  if (it == index_.end()) throw Error(Errc::InvalidScenario, "unknown node " + std::to_string(v));
  return it->second;
}

const std::vector<LinkIndex>& RoadNetwork::in_links(NodeId v) const {
  return in_[static_cast<std::size_t>(node_index(v))];
}

const std::vector<LinkIndex>& RoadNetwork::out_links(NodeId v) const {
  return out_[static_cast<std::size_t>(node_index(v))];
}

const std::vector<bool>& RoadNetwork::viable_links(NodeId destination) const {
  auto it = viable_cache_.find(destination);
  if (it != viable_cache_.end()) return it->second;
  std::vector<bool> node_reaches(nodes_.size(), false);
  std::vector<bool> viable(links_.size(), false);
  std::queue<int> frontier;
  node_reaches[static_cast<std::size_t>(node_index(destination))] = true;
  frontier.push(node_index(destination));
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop();
    for (LinkIndex a : in_[static_cast<std::size_t>(v)]) {
      viable[static_cast<std::size_t>(a)] = true;
      const int u = node_index(links_[static_cast<std::size_t>(a)].tail);
      if (!node_reaches[static_cast<std::size_t>(u)]) {
        node_reaches[static_cast<std::size_t>(u)] = true;
        frontier.push(u);
      }
    }
  }
  return viable_cache_.emplace(destination, std::move(viable)).first->second;
}

namespace {

bool weakly_connected(const RoadNetwork& net) {
  const int n = net.node_count();
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  int components = n;
  for (const auto& l : net.links()) {
    const int a = find(net.node_index(l.tail));
    const int b = find(net.node_index(l.head));
    if (a != b) {
      parent[static_cast<std::size_t>(a)] = b;
      --components;
    }
  }
  return components == 1;
}

// Walks predecessor links among the nodes Kahn's algorithm could not remove;
// every such node has an in-link from another such node, so the walk must
// revisit a node.
std::string describe_cycle(const RoadNetwork& net, const std::vector<int>& indegree) {
  int start = -1;
  for (int i = 0; i < net.node_count(); ++i)
    if (indegree[static_cast<std::size_t>(i)] > 0) {
      start = i;
      break;
    }
  std::vector<int> seen_at(static_cast<std::size_t>(net.node_count()), -1);
  std::vector<NodeId> walk;
  int v = start;
  while (seen_at[static_cast<std::size_t>(v)] < 0) {
    seen_at[static_cast<std::size_t>(v)] = static_cast<int>(walk.size());
    walk.push_back(net.nodes()[static_cast<std::size_t>(v)]);
    for (LinkIndex a : net.in_links(net.nodes()[static_cast<std::size_t>(v)])) {
      const int u = net.node_index(net.link(a).tail);
      if (indegree[static_cast<std::size_t>(u)] > 0) {
        v = u;
        break;
      }
    }
  }
  std::vector<NodeId> cycle(walk.begin() + seen_at[static_cast<std::size_t>(v)], walk.end());
  std::reverse(cycle.begin(), cycle.end());
  std::string text;
  for (NodeId x : cycle) text += std::to_string(x) + " -> ";
  return text + std::to_string(cycle.front());
}

}  // namespace

std::vector<LinkIndex> validate_acyclic(const RoadNetwork& net) {
  if (!weakly_connected(net)) throw Error(Errc::Disconnected, "network is not connected");
  const int n = net.node_count();
  std::vector<int> indegree(static_cast<std::size_t>(n), 0);
  for (const auto& l : net.links()) ++indegree[static_cast<std::size_t>(net.node_index(l.head))];
  std::queue<int> ready;
  for (int i = 0; i < n; ++i)
    if (indegree[static_cast<std::size_t>(i)] == 0) ready.push(i);
  std::vector<LinkIndex> order;
  order.reserve(static_cast<std::size_t>(net.link_count()));
  int removed = 0;
  while (!ready.empty()) {
    const int v = ready.front();
    ready.pop();
    ++removed;
    for (LinkIndex a : net.out_links(net.nodes()[static_cast<std::size_t>(v)])) {
      order.push_back(a);
      const int h = net.node_index(net.link(a).head);
      if (--indegree[static_cast<std::size_t>(h)] == 0) ready.push(h);
    }
  }
  if (removed != n) throw Error(Errc::CycleDetected, "cycle " + describe_cycle(net, indegree));
  return order;
}

bool LinkTimeTable::has_row(NodeId v, int commodity) const {
  for (const auto& [key, f] : table_)
    if (std::get<0>(key) == v && std::get<2>(key) == commodity) return true;
  return false;
}

Eigen::ArrayXd SplitSchedule::row(const RoadNetwork& net, NodeId v, int commodity, NodeId destination,
                                  double t0, double t1) const {
  const auto& outs = net.out_links(v);
  const auto& viable = net.viable_links(destination);
  Eigen::ArrayXd theta = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(outs.size()));
  if (v == destination) return theta;
  int viable_count = 0;
  int last_viable = -1;
  bool any = false;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    if (viable[static_cast<std::size_t>(outs[i])]) {
      ++viable_count;
      last_viable = static_cast<int>(i);
    }
    if (const auto* f = find(v, outs[i], commodity)) {
      theta(static_cast<Eigen::Index>(i)) = f->average(t0, t1);
      any = true;
    }
  }
  if (!any && viable_count == 1) theta(last_viable) = 1.0;
  else if (!any && viable_count > 1)
    throw Error(Errc::SplitRowInvalid, "missing split row at node " + std::to_string(v) +
                                           " for commodity " + std::to_string(commodity));
  return theta;
}

void check_split_row(std::span<const double> theta, NodeId v, int commodity) {
  double sum = 0.0;
  for (double x : theta) {
    if (!(x >= 0.0 && x <= 1.0))
      throw Error(Errc::SplitRowInvalid, "split outside [0,1] at node " + std::to_string(v) +
                                             " for commodity " + std::to_string(commodity));
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSplitTolerance)
    throw Error(Errc::SplitRowInvalid, "split row at node " + std::to_string(v) + " for commodity " +
                                           std::to_string(commodity) + " sums to " + std::to_string(sum));
}

Eigen::ArrayXd junction_inflows(std::span<const double> outflows_in, std::span<const double> theta,
                                std::span<const double> sources) {
  if (theta.size() != sources.size())
    throw Error(Errc::InvalidScenario, "split row and source row differ in length");
  double incoming = 0.0;
  for (double y : outflows_in) incoming += y;
  Eigen::ArrayXd u(static_cast<Eigen::Index>(theta.size()));
  for (std::size_t i = 0; i < theta.size(); ++i)
    u(static_cast<Eigen::Index>(i)) = sources[i] + theta[i] * incoming;
  return u;
}

void validate_routing_inputs(const RoadNetwork& net, const std::vector<Commodity>& commodities,
                             const SplitSchedule& splits, const SourceSchedule& sources, double horizon,
                             const std::vector<bool>& externally_routed) {
  const int K = static_cast<int>(commodities.size());
  for (const auto& c : commodities)
    if (!net.has_node(c.destination))
      throw Error(Errc::InvalidScenario, "commodity destination " + std::to_string(c.destination) +
                                             " is not a node");

  auto check_entry = [&](const LinkTimeTable::Key& key, const char* what) {
    const auto [v, a, k] = key;
    if (k < 0 || k >= K) throw Error(Errc::InvalidScenario, std::string(what) + " for unknown commodity");
    const auto& outs = net.out_links(v);
    if (std::find(outs.begin(), outs.end(), a) == outs.end())
      throw Error(Errc::InvalidScenario, std::string(what) + " on link " + std::to_string(a) +
                                             " which does not leave node " + std::to_string(v));
  };
  auto positive_somewhere = [](const PiecewiseSchedule& f) {
    for (const auto& p : f.pieces())
      if (p.t_end > p.t_start && (p.value != 0.0 || p.slope != 0.0)) return true;
    return false;
  };

  for (const auto& [key, f] : splits.entries()) {
    check_entry(key, "split");
    const auto [v, a, k] = key;
    if (f.min_value() < 0.0)
      throw Error(Errc::SplitRowInvalid, "negative split at node " + std::to_string(v));
    for (const auto& p : f.pieces())
      if (p.value > 1.0 || p.value + p.slope * (p.t_end - p.t_start) > 1.0)
        throw Error(Errc::SplitRowInvalid, "split above 1 at node " + std::to_string(v));
    const auto& viable = net.viable_links(commodities[static_cast<std::size_t>(k)].destination);
    if (!viable[static_cast<std::size_t>(a)] && positive_somewhere(f))
      throw Error(Errc::InvalidScenario, "positive split on link " + std::to_string(a) +
                                             " from which the destination of commodity " +
                                             std::to_string(k) + " is unreachable");
  }

  for (const auto& [key, f] : sources.entries()) {
    check_entry(key, "source");
    const auto [v, a, k] = key;
    if (f.min_value() < 0.0) throw Error(Errc::InvalidScenario, "negative source rate");
    const NodeId dest = commodities[static_cast<std::size_t>(k)].destination;
    if (!positive_somewhere(f)) continue;
    if (v == dest)
      throw Error(Errc::InvalidScenario, "source of commodity " + std::to_string(k) + " placed at its destination");
    if (!net.viable_links(dest)[static_cast<std::size_t>(a)])
      throw Error(Errc::InvalidScenario, "source on link " + std::to_string(a) +
                                             " cannot reach the destination of commodity " + std::to_string(k));
  }

  for (int k = 0; k < K; ++k) {
    if (!externally_routed.empty() && externally_routed[static_cast<std::size_t>(k)]) continue;
    const NodeId dest = commodities[static_cast<std::size_t>(k)].destination;
    const auto& viable = net.viable_links(dest);
    for (NodeId v : net.nodes()) {
      if (v == dest) continue;
      const auto& outs = net.out_links(v);
      const auto viable_count = std::count_if(outs.begin(), outs.end(),
                                              [&](LinkIndex a) { return viable[static_cast<std::size_t>(a)]; });
      if (viable_count == 0) continue;
      // Rows are piecewise constant between breakpoints; checking one point
      // per sub-interval covers the whole horizon.
      std::set<double> breaks{0.0, horizon};
      bool any = false;
      for (LinkIndex a : outs)
        if (const auto* f = splits.find(v, a, k)) {
          any = true;
          for (const auto& p : f->pieces()) {
            if (p.t_start > 0.0 && p.t_start < horizon) breaks.insert(p.t_start);
            if (p.t_end > 0.0 && p.t_end < horizon) breaks.insert(p.t_end);
          }
        }
      if (!any) {
        if (viable_count > 1)
          throw Error(Errc::SplitRowInvalid, "missing split row at node " + std::to_string(v) +
                                                 " for commodity " + std::to_string(k));
        continue;
      }
      std::vector<double> row(outs.size());
      for (auto it = breaks.begin(); std::next(it) != breaks.end(); ++it) {
        const double mid = (*it + *std::next(it)) / 2;
        for (std::size_t i = 0; i < outs.size(); ++i) {
          const auto* f = splits.find(v, outs[i], k);
          row[i] = f ? f->value(mid) : 0.0;
        }
        check_split_row(row, v, k);
      }
    }
  }
}

}  // namespace mobility
