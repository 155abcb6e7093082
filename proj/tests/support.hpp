#pragma once

#include "mobility/network_sim.hpp"
#include "mobility/rng.hpp"

#include <algorithm>
#include <numeric>

namespace testing_support {

using namespace mobility;

/// Random acyclic connected network (links only go from lower to higher
/// node ids) with random commodities, splits, sources and initial data.
inline NetworkScenario random_scenario(Rng& rng, int max_nodes, int max_commodities, int cells, double horizon) {
  const int n = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(max_nodes - 1)));
  std::vector<NodeId> nodes(static_cast<std::size_t>(n));
  std::iota(nodes.begin(), nodes.end(), 0);
  std::vector<Link> links;
  for (int v = 1; v < n; ++v) links.push_back({static_cast<int>(rng.index(static_cast<std::size_t>(v))), v});
  const int extra = static_cast<int>(rng.index(static_cast<std::size_t>(n + 1)));
  for (int e = 0; e < extra; ++e) {
    const int u = static_cast<int>(rng.index(static_cast<std::size_t>(n - 1)));
    const int v = u + 1 + static_cast<int>(rng.index(static_cast<std::size_t>(n - 1 - u)));
    links.push_back({u, v});
  }
  NetworkScenario sc;
  sc.net = RoadNetwork(nodes, links);
  sc.horizon = horizon;
  sc.solver.cells = cells;
  const int L = sc.net.link_count();

  sc.models.clear();
  double vmax_all = 0.0;
  for (int a = 0; a < L; ++a) {
    LinkModel m;
    const double vmax = rng.uniform(0.5, 2.0);
    vmax_all = std::max(vmax_all, vmax);
    m.law = inverse_speed(vmax, rng.uniform(0.0, 3.0));
    if (rng.uniform() < 0.25) m.window = NonlocalWindow::affine(0.0, rng.uniform(0.0, 1.0), 1.0, 0.0);
    sc.models.push_back(m);
  }
  sc.steps = steps_for_cfl(horizon, cells, vmax_all);

  const int K = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_commodities)));
  sc.rho0.assign(static_cast<std::size_t>(L), {});
  for (int k = 0; k < K; ++k) {
    const NodeId dest = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(n - 1)));
    sc.commodities.push_back({rng.uniform() < 0.5 ? UserClass::routed : UserClass::non_routed, dest});
    const auto& viable = sc.net.viable_links(dest);
    for (NodeId v : nodes) {
      if (v == dest) continue;
      std::vector<LinkIndex> ok;
      for (LinkIndex a : sc.net.out_links(v))
        if (viable[static_cast<std::size_t>(a)]) ok.push_back(a);
      if (ok.empty()) continue;
      if (ok.size() > 1 || rng.uniform() < 0.5) {
        // Two time pieces with independent random rows.
        const double cut = rng.uniform(0.1, 0.9) * horizon;
        std::vector<double> w1(ok.size()), w2(ok.size());
        for (auto& w : w1) w = rng.uniform(0.05, 1.0);
        for (auto& w : w2) w = rng.uniform(0.05, 1.0);
        const double s1 = std::accumulate(w1.begin(), w1.end(), 0.0), s2 = std::accumulate(w2.begin(), w2.end(), 0.0);
        double acc1 = 0.0, acc2 = 0.0;
        for (std::size_t i = 0; i < ok.size(); ++i) {
          // The last entry absorbs rounding so each row sums to one exactly.
          const double a1 = i + 1 == ok.size() ? 1.0 - acc1 : w1[i] / s1;
          const double a2 = i + 1 == ok.size() ? 1.0 - acc2 : w2[i] / s2;
          acc1 += a1;
          acc2 += a2;
          sc.splits.set(v, ok[i], k, PiecewiseSchedule({{0.0, cut, a1, 0.0}, {cut, horizon, a2, 0.0}}));
        }
      }
      if (rng.uniform() < 0.6) {
        const LinkIndex a = ok[rng.index(ok.size())];
        const double t1 = rng.uniform(0.1, 0.8) * horizon;
        sc.sources.set(v, a, k, PiecewiseSchedule({{0.0, t1, rng.uniform(0.0, 1.0), 0.0},
                                                   {t1, horizon, rng.uniform(0.0, 0.5), 0.0}}));
      }
    }
    for (int a = 0; a < L; ++a) {
      auto& per = sc.rho0[static_cast<std::size_t>(a)];
      per.resize(static_cast<std::size_t>(K));
      if (viable[static_cast<std::size_t>(a)] && rng.uniform() < 0.5) {
        Eigen::ArrayXd r(cells);
        const double level = rng.uniform(0.0, 0.8), amp = rng.uniform(0.0, level);
        for (int j = 0; j < cells; ++j) r(j) = level + amp * std::sin(6.0 * (j + 0.5) / cells + a);
        per[static_cast<std::size_t>(k)] = r;
      }
    }
  }
  return sc;
}

/// Cell averages of value * indicator([lo, hi]).
inline Eigen::ArrayXd indicator_cells(int N, double lo, double hi, double value) {
  Eigen::ArrayXd r(N);
  for (int j = 0; j < N; ++j) {
    const double a = double(j) / N, b = double(j + 1) / N;
    r(j) = value * std::max(0.0, std::min(b, hi) - std::max(a, lo)) * N;
  }
  return r;
}

}  // namespace testing_support
