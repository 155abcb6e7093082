#include "mobility/social_optimum.hpp"

#include "mobility/error.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

namespace mobility {

double DemandSpec::total(const std::vector<Commodity>& commodities, NodeId destination, UserClass cls) const {
  double sum = 0.0;
  for (const auto& [key, d] : demand) {
    const auto& c = commodities.at(static_cast<std::size_t>(std::get<2>(key)));
    if (c.destination == destination && c.user_class == cls) sum += d;
  }
  return sum;
}

double backlog_objective(const NetworkState& st, const DemandSpec& demand) {
  std::map<std::pair<NodeId, UserClass>, std::vector<int>> groups;
  for (int k = 0; k < static_cast<int>(st.commodities.size()); ++k)
    groups[{st.commodities[static_cast<std::size_t>(k)].destination, st.commodities[static_cast<std::size_t>(k)].user_class}].push_back(k);
  const double dt = st.dt();
  double J = 0.0;
  for (const auto& [group, members] : groups) {
    const double D = demand.total(st.commodities, group.first, group.second);
    double arrived = 0.0;
    for (int n = 0; n < st.completed; ++n) {
      const double backlog = D - arrived;
      J += dt * backlog * backlog;
      for (int k : members) arrived += st.arrivals(n, k) * dt;
    }
  }
  return J;
}

Eigen::ArrayXd project_demand(const Eigen::ArrayXd& rates, const Eigen::ArrayXd& lengths, double demand) {
  if (rates.size() != lengths.size()) throw Error(Errc::DimensionMismatch, "rates and interval lengths differ in size");
  const Eigen::ArrayXd clipped = rates.max(0.0);
  const double current = (clipped * lengths).sum();
  if (current > 0.0) {
    if (current == demand) return clipped;
    return clipped * (demand / current);
  }
  return Eigen::ArrayXd::Constant(rates.size(), demand / lengths.sum());
}

Eigen::ArrayXd project_simplex(const Eigen::ArrayXd& v, const std::vector<bool>& allowed) {
  std::vector<double> u;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (allowed[static_cast<std::size_t>(i)]) u.push_back(v(i));
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(v.size());
  if (u.empty()) return out;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, shift = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) shift = candidate;
  }
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (allowed[static_cast<std::size_t>(i)]) out(i) = std::max(v(i) - shift, 0.0);
  // Already on the simplex: return the input untouched (projection is idempotent).
  bool feasible = true;
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (allowed[static_cast<std::size_t>(i)]) {
      feasible = feasible && v(i) >= 0.0;
      total += v(i);
    } else {
      feasible = feasible && v(i) == 0.0;
    }
  }
  if (feasible && std::abs(total - 1.0) <= 1e-15) return v;
  return out / out.sum();
}

Eigen::ArrayXd ControlParameterization::interval_lengths() const {
  Eigen::ArrayXd len(intervals());
  for (int p = 0; p < intervals(); ++p) len(p) = knots[static_cast<std::size_t>(p + 1)] - knots[static_cast<std::size_t>(p)];
  return len;
}

int ControlParameterization::dimension() const {
  Eigen::Index d = 0;
  for (const auto& s : splits) d += s.values.size();
  for (const auto& s : sources) d += s.rates.size();
  return static_cast<int>(d);
}

Eigen::ArrayXd ControlParameterization::flatten() const {
  Eigen::ArrayXd x(dimension());
  Eigen::Index i = 0;
  for (const auto& s : splits)
    for (Eigen::Index p = 0; p < s.values.rows(); ++p)
      for (Eigen::Index j = 0; j < s.values.cols(); ++j) x(i++) = s.values(p, j);
  for (const auto& s : sources) {
    x.segment(i, s.rates.size()) = s.rates;
    i += s.rates.size();
  }
  return x;
}

void ControlParameterization::unflatten(const Eigen::ArrayXd& x) {
  if (x.size() != dimension()) throw Error(Errc::DimensionMismatch, "control vector has the wrong size");
  Eigen::Index i = 0;
  for (auto& s : splits)
    for (Eigen::Index p = 0; p < s.values.rows(); ++p)
      for (Eigen::Index j = 0; j < s.values.cols(); ++j) s.values(p, j) = x(i++);
  for (auto& s : sources) {
    s.rates = x.segment(i, s.rates.size());
    i += s.rates.size();
  }
}

void ControlParameterization::project(const NetworkScenario& sc, const DemandSpec& demand) {
  const int P = intervals();
  if (P < 1 || std::abs(knots.front()) > 1e-12 || std::abs(knots.back() - sc.horizon) > 1e-9 * sc.horizon ||
      !std::is_sorted(knots.begin(), knots.end()))
    throw Error(Errc::InvalidScenario, "control knots must increase from 0 to the horizon");
  for (auto& s : splits) {
    const auto& outs = sc.net.out_links(s.node);
    if (s.values.rows() != P || s.values.cols() != static_cast<Eigen::Index>(outs.size()))
      throw Error(Errc::DimensionMismatch, "split control at node " + std::to_string(s.node) + " has the wrong shape");
    const auto& viable = sc.net.viable_links(sc.commodities.at(static_cast<std::size_t>(s.commodity)).destination);
    std::vector<bool> allowed;
    for (LinkIndex a : outs) allowed.push_back(viable[static_cast<std::size_t>(a)]);
    for (int p = 0; p < P; ++p) s.values.row(p) = project_simplex(s.values.row(p).transpose(), allowed).transpose();
  }
  const Eigen::ArrayXd lengths = interval_lengths();
  for (auto& s : sources) {
    if (s.rates.size() != P) throw Error(Errc::DimensionMismatch, "source control has the wrong number of intervals");
    auto it = demand.demand.find({s.node, s.link, s.commodity});
    s.rates = project_demand(s.rates, lengths, it == demand.demand.end() ? 0.0 : it->second);
  }
}

void ControlParameterization::apply(NetworkScenario& sc) const {
  auto pieces = [&](auto value_at) {
    std::vector<SchedulePiece> out;
    for (int p = 0; p < intervals(); ++p)
      out.push_back({knots[static_cast<std::size_t>(p)], knots[static_cast<std::size_t>(p + 1)], value_at(p), 0.0});
    return PiecewiseSchedule(out);
  };
  for (const auto& s : splits) {
    const auto& outs = sc.net.out_links(s.node);
    for (std::size_t j = 0; j < outs.size(); ++j)
      sc.splits.set(s.node, outs[j], s.commodity, pieces([&](int p) { return s.values(p, static_cast<Eigen::Index>(j)); }));
  }
  for (const auto& s : sources) sc.sources.set(s.node, s.link, s.commodity, pieces([&](int p) { return s.rates(p); }));
}

double evaluate_controls(const NetworkScenario& base, const DemandSpec& demand, const ControlParameterization& controls) {
  NetworkScenario sc = base;
  controls.apply(sc);
  return backlog_objective(simulate(sc), demand);
}

SocialResult optimize_social(const NetworkScenario& base, const DemandSpec& demand, ControlParameterization controls,
                             int budget, const SocialOptions& options) {
  if (budget < 1) throw Error(Errc::InvalidScenario, "budget must allow at least one simulation");
  controls.project(base, demand);
  SocialResult result;
  auto evaluate = [&](const Eigen::ArrayXd& x) {
    ControlParameterization c = controls;
    c.unflatten(x);
    c.project(base, demand);
    return std::make_pair(evaluate_controls(base, demand, c), c.flatten());
  };

  Eigen::ArrayXd x = controls.flatten();
  double J = evaluate_controls(base, demand, controls);
  result.simulations = 1;
  const int dim = controls.dimension();
  Eigen::ArrayXd step = Eigen::ArrayXd::Constant(dim, options.initial_step);
  result.trace.push_back({1, J, dim ? step.mean() : 0.0});

  const double h = options.fd_step;
  bool active = dim > 0;
  while (active && !result.budget_exhausted) {
    active = false;
    for (int i = 0; i < dim; ++i) {
      if (step(i) < options.min_step) continue;
      active = true;
      if (budget - result.simulations < 3) {
        result.budget_exhausted = true;
        break;
      }
      Eigen::ArrayXd plus = x, minus = x;
      plus(i) += h;
      minus(i) -= h;
      double j_plus, j_minus;
      if (options.threads > 1) {
        auto f = std::async(std::launch::async, [&] { return evaluate(plus).first; });
        j_minus = evaluate(minus).first;
        j_plus = f.get();
      } else {
        j_plus = evaluate(plus).first;
        j_minus = evaluate(minus).first;
      }
      result.simulations += 2;
      const double g = (j_plus - j_minus) / (2 * h);
      if (g == 0.0) {
        step(i) *= 0.5;
        continue;
      }
      Eigen::ArrayXd trial = x;
      trial(i) -= step(i) * (g > 0.0 ? 1.0 : -1.0);
      const auto [j_trial, projected] = evaluate(trial);
      ++result.simulations;
      if (j_trial < J) {
        x = projected;
        J = j_trial;
        step(i) = std::min(2 * step(i), options.max_step);
        result.trace.push_back({result.simulations, J, step.mean()});
      } else {
        step(i) *= 0.5;
      }
    }
  }
  controls.unflatten(x);
  result.best = controls;
  result.objective = J;
  return result;
}

}  // namespace mobility
