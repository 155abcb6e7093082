#pragma once

#include "mobility/schedule.hpp"

#include <Eigen/Core>

#include <map>
#include <span>
#include <tuple>
#include <vector>

namespace mobility {

using NodeId = int;
using LinkIndex = int;

struct Link {
  NodeId tail = 0;
  NodeId head = 0;
};

/// Directed network of unit-length links. Parallel links between the same
/// pair of nodes are allowed and distinguished by their index.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  RoadNetwork(std::vector<NodeId> nodes, std::vector<Link> links);

  const std::vector<NodeId>& nodes() const noexcept { return nodes_; }
  const std::vector<Link>& links() const noexcept { return links_; }
  int node_count() const noexcept { return static_cast<int>(nodes_.size()); }
  int link_count() const noexcept { return static_cast<int>(links_.size()); }
  const Link& link(LinkIndex a) const { return links_.at(static_cast<std::size_t>(a)); }

  bool has_node(NodeId v) const;
  /// Position of `v` in nodes(); throws InvalidScenario for unknown ids.
  int node_index(NodeId v) const;

  const std::vector<LinkIndex>& in_links(NodeId v) const;
  const std::vector<LinkIndex>& out_links(NodeId v) const;

  /// Links from which `destination` can be reached (including links ending
  /// there). Computed once per destination by reverse reachability.
  const std::vector<bool>& viable_links(NodeId destination) const;

 private:
  std::vector<NodeId> nodes_;
  std::vector<Link> links_;
  std::map<NodeId, int> index_;
  std::vector<std::vector<LinkIndex>> in_;
  std::vector<std::vector<LinkIndex>> out_;
  mutable std::map<NodeId, std::vector<bool>> viable_cache_;
};

/// Topological ordering of links: every link appears after all links that
/// end at its tail node. Throws CycleDetected (with one cycle listed) or
/// Disconnected.
std::vector<LinkIndex> validate_acyclic(const RoadNetwork& net);

enum class UserClass { routed, non_routed };

struct Commodity {
  UserClass user_class = UserClass::non_routed;
  NodeId destination = 0;
};

/// Time functions indexed by (node, outgoing link, commodity).
class LinkTimeTable {
 public:
  using Key = std::tuple<NodeId, LinkIndex, int>;

  void set(NodeId v, LinkIndex a, int commodity, PiecewiseSchedule f) {
    table_[{v, a, commodity}] = std::move(f);
  }
  const PiecewiseSchedule* find(NodeId v, LinkIndex a, int commodity) const {
    auto it = table_.find({v, a, commodity});
    return it == table_.end() ? nullptr : &it->second;
  }
  bool has_row(NodeId v, int commodity) const;
  const std::map<Key, PiecewiseSchedule>& entries() const noexcept { return table_; }

 private:
  std::map<Key, PiecewiseSchedule> table_;
};

/// Routing fractions theta_a^{v,k}(t). A node with exactly one viable
/// outgoing link for a commodity needs no explicit row.
class SplitSchedule : public LinkTimeTable {
 public:
  /// Average split row over [t0, t1] for the out-links of `v` (in
  /// out_links(v) order). Entries on non-viable links are zero.
  Eigen::ArrayXd row(const RoadNetwork& net, NodeId v, int commodity, NodeId destination,
                     double t0, double t1) const;
};

/// Departure rates s_a^{v,k}(t) >= 0.
class SourceSchedule : public LinkTimeTable {
 public:
  double rate(NodeId v, LinkIndex a, int commodity, double t0, double t1) const {
    const auto* f = find(v, a, commodity);
    return f ? f->average(t0, t1) : 0.0;
  }
};

inline constexpr double kSplitTolerance = 1e-12;

/// Throws SplitRowInvalid unless the row is componentwise in [0, 1] and sums
/// to one within kSplitTolerance.
void check_split_row(std::span<const double> theta, NodeId v, int commodity);

/// Inflow into each outgoing link of a junction for one commodity:
/// u_a = s_a + theta_a * sum(y over incoming links).
Eigen::ArrayXd junction_inflows(std::span<const double> outflows_in,
                                std::span<const double> theta,
                                std::span<const double> sources);

/// Scenario-level checks: rows sum to one where routing is needed, theta and
/// sources vanish on links that cannot reach the commodity's destination,
/// sources are nonnegative and not placed at the destination itself.
/// Commodities flagged in `externally_routed` get their rows from a routing
/// policy at run time and need none in the schedule.
void validate_routing_inputs(const RoadNetwork& net, const std::vector<Commodity>& commodities,
                             const SplitSchedule& splits, const SourceSchedule& sources,
                             double horizon, const std::vector<bool>& externally_routed = {});

}  // namespace mobility
