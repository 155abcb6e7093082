#include "mobility/scenario.hpp"

#include "mobility/csv.hpp"
#include "mobility/error.hpp"
#include "mobility/hash.hpp"
#include "mobility/network_sim.hpp"
#include "mobility/platoon_flow.hpp"
#include "mobility/private_agg.hpp"
#include "mobility/routing.hpp"
#include "mobility/scheduler.hpp"
#include "mobility/social_optimum.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <optional>
#include <sstream>

namespace mobility {

namespace {

using nlohmann::json;

[[noreturn]] void schema_fail(const std::string& path, const std::string& what) {
  throw Error(Errc::SchemaError, (path.empty() ? std::string("/") : path) + ": " + what);
}

std::string child(const std::string& path, std::string_view key) { return path + "/" + std::string(key); }
std::string child(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

void expect_object(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) schema_fail(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      schema_fail(child(path, key), "unknown field");
  }
}

const json& array_at(const json& j, const std::string& path) {
  if (!j.is_array()) schema_fail(path, "expected an array");
  return j;
}

const json& required(const json& o, std::string_view key, const std::string& path) {
  auto it = o.find(key);
  if (it == o.end()) schema_fail(child(path, key), "missing required field");
  return *it;
}

const json* optional(const json& o, std::string_view key) {
  auto it = o.find(key);
  return it == o.end() ? nullptr : &*it;
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) schema_fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) schema_fail(path, "expected a finite number");
  return v;
}

std::int64_t as_integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) schema_fail(path, "expected an integer");
  return j.get<std::int64_t>();
}

int as_int(const json& j, const std::string& path) {
  const auto v = as_integer(j, path);
  if (v < -(1LL << 31) || v >= (1LL << 31)) schema_fail(path, "integer out of range");
  return static_cast<int>(v);
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) schema_fail(path, "expected a string");
  return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) schema_fail(path, "expected true or false");
  return j.get<bool>();
}

double number(const json& o, std::string_view key, const std::string& path) {
  return as_number(required(o, key, path), child(path, key));
}
double number_or(const json& o, std::string_view key, const std::string& path, double fallback) {
  const auto* v = optional(o, key);
  return v ? as_number(*v, child(path, key)) : fallback;
}
int int_of(const json& o, std::string_view key, const std::string& path) {
  return as_int(required(o, key, path), child(path, key));
}
int int_or(const json& o, std::string_view key, const std::string& path, int fallback) {
  const auto* v = optional(o, key);
  return v ? as_int(*v, child(path, key)) : fallback;
}
bool bool_or(const json& o, std::string_view key, const std::string& path, bool fallback) {
  const auto* v = optional(o, key);
  return v ? as_bool(*v, child(path, key)) : fallback;
}

int positive_int(const json& o, std::string_view key, const std::string& path, int fallback) {
  const int v = int_or(o, key, path, fallback);
  if (v <= 0) schema_fail(child(path, key), "must be positive");
  return v;
}

double positive_number(const json& o, std::string_view key, const std::string& path) {
  const double v = number(o, key, path);
  if (v <= 0.0) schema_fail(child(path, key), "must be positive");
  return v;
}

std::vector<double> number_list(const json& j, const std::string& path) {
  std::vector<double> out;
  for (std::size_t i = 0; i < array_at(j, path).size(); ++i) out.push_back(as_number(j[i], child(path, i)));
  return out;
}

std::vector<int> int_list(const json& j, const std::string& path) {
  std::vector<int> out;
  for (std::size_t i = 0; i < array_at(j, path).size(); ++i) out.push_back(as_int(j[i], child(path, i)));
  return out;
}

Eigen::ArrayXd to_array(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::ArrayXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---------------------------------------------------------------- pieces

PiecewiseSchedule parse_pieces(const json& j, const std::string& path) {
  std::vector<SchedulePiece> pieces;
  for (std::size_t i = 0; i < array_at(j, path).size(); ++i) {
    const auto p = child(path, i);
    expect_object(j[i], p, {"t_start", "t_end", "value", "slope"});
    SchedulePiece piece{number(j[i], "t_start", p), number(j[i], "t_end", p), number(j[i], "value", p),
                        number_or(j[i], "slope", p, 0.0)};
    if (piece.t_end <= piece.t_start) schema_fail(child(p, "t_end"), "must exceed t_start");
    pieces.push_back(piece);
  }
  try {
    return PiecewiseSchedule(std::move(pieces));
  } catch (const Error& e) {
    schema_fail(path, e.what());
  }
}

// ---------------------------------------------------------------- profiles

/// Cell averages of an initial profile on `cells` cells over [lo, hi].
Eigen::ArrayXd parse_profile(const json& j, const std::string& path, double lo, double hi, int cells) {
  if (!j.is_object()) schema_fail(path, "expected an object");
  const auto type = as_string(required(j, "type", path), child(path, "type"));
  if (type == "zero") {
    expect_object(j, path, {"type"});
    return Eigen::ArrayXd::Zero(cells);
  }
  if (type == "constant") {
    expect_object(j, path, {"type", "value"});
    return Eigen::ArrayXd::Constant(cells, number(j, "value", path));
  }
  if (type == "indicator") {
    expect_object(j, path, {"type", "lo", "hi", "value"});
    const double a = number(j, "lo", path), b = number(j, "hi", path), v = number(j, "value", path);
    if (b <= a) schema_fail(child(path, "hi"), "must exceed lo");
    return cell_averages([=](double x) { return x >= a && x <= b ? v : 0.0; }, lo, hi, cells);
  }
  if (type == "bump") {
    // scale * (hi - x) * (x - lo) on [lo, hi]
    expect_object(j, path, {"type", "lo", "hi", "scale"});
    const double a = number(j, "lo", path), b = number(j, "hi", path), s = number_or(j, "scale", path, 1.0);
    if (b <= a) schema_fail(child(path, "hi"), "must exceed lo");
    return cell_averages([=](double x) { return x >= a && x <= b ? s * (b - x) * (x - a) : 0.0; }, lo, hi, cells);
  }
  if (type == "cells") {
    expect_object(j, path, {"type", "values"});
    const auto values = number_list(required(j, "values", path), child(path, "values"));
    if (static_cast<int>(values.size()) != cells)
      schema_fail(child(path, "values"), "expected " + std::to_string(cells) + " cell values, got " +
                                             std::to_string(values.size()));
    return to_array(values);
  }
  schema_fail(child(path, "type"), "unknown profile type '" + type + "'");
}

// ---------------------------------------------------------------- network

VelocityLaw parse_law(const json& j, const std::string& path) {
  if (!j.is_object()) schema_fail(path, "expected an object");
  const auto type = as_string(required(j, "type", path), child(path, "type"));
  if (type == "constant") {
    expect_object(j, path, {"type", "speed"});
    return constant_speed(positive_number(j, "speed", path));
  }
  if (type == "inverse") {
    expect_object(j, path, {"type", "vmax", "alpha"});
    const double alpha = number(j, "alpha", path);
    if (alpha < 0.0) schema_fail(child(path, "alpha"), "must be nonnegative");
    return inverse_speed(positive_number(j, "vmax", path), alpha);
  }
  schema_fail(child(path, "type"), "unknown velocity law '" + type + "'");
}

NonlocalWindow parse_window(const json* j, const std::string& path) {
  if (!j) return NonlocalWindow::whole();
  expect_object(*j, path, {"b0", "b1", "d0", "d1"});
  try {
    return NonlocalWindow::affine(number_or(*j, "b0", path, 0.0), number_or(*j, "b1", path, 0.0),
                                  number_or(*j, "d0", path, 1.0), number_or(*j, "d1", path, 0.0));
  } catch (const Error& e) {
    schema_fail(path, e.what());
  }
}

void parse_table(const json& j, const std::string& path, LinkTimeTable& table, const RoadNetwork& net,
                 int commodities) {
  for (std::size_t i = 0; i < array_at(j, path).size(); ++i) {
    const auto p = child(path, i);
    expect_object(j[i], p, {"node", "link", "commodity", "pieces"});
    const int v = int_of(j[i], "node", p), a = int_of(j[i], "link", p), k = int_or(j[i], "commodity", p, 0);
    if (!net.has_node(v)) schema_fail(child(p, "node"), "unknown node");
    if (a < 0 || a >= net.link_count()) schema_fail(child(p, "link"), "unknown link");
    if (net.link(a).tail != v) schema_fail(child(p, "link"), "link does not leave this node");
    if (k < 0 || k >= commodities) schema_fail(child(p, "commodity"), "unknown commodity");
    table.set(v, a, k, parse_pieces(required(j[i], "pieces", p), child(p, "pieces")));
  }
}

std::vector<std::vector<Eigen::ArrayXd>> parse_rho0(const json& j, const std::string& path, int links, int commodities,
                                                    int cells) {
  std::vector<std::vector<Eigen::ArrayXd>> rho0(static_cast<std::size_t>(links),
                                                std::vector<Eigen::ArrayXd>(static_cast<std::size_t>(commodities)));
  for (std::size_t i = 0; i < array_at(j, path).size(); ++i) {
    const auto p = child(path, i);
    expect_object(j[i], p, {"link", "commodity", "profile"});
    const int a = int_of(j[i], "link", p), k = int_or(j[i], "commodity", p, 0);
    if (a < 0 || a >= links) schema_fail(child(p, "link"), "unknown link");
    if (k < 0 || k >= commodities) schema_fail(child(p, "commodity"), "unknown commodity");
    rho0[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] =
        parse_profile(required(j[i], "profile", p), child(p, "profile"), 0.0, 1.0, cells);
  }
  return rho0;
}

LinkMethod parse_method(const json& o, const std::string& path) {
  const auto* m = optional(o, "method");
  if (!m) return LinkMethod::automatic;
  const auto s = as_string(*m, child(path, "method"));
  if (s == "automatic") return LinkMethod::automatic;
  if (s == "characteristics") return LinkMethod::characteristics;
  if (s == "finite_volume") return LinkMethod::finite_volume;
  schema_fail(child(path, "method"), "expected automatic, characteristics or finite_volume");
}

NetworkScenario parse_network(const json& j, const std::string& path) {
  expect_object(j, path,
                {"nodes", "links", "commodities", "models", "splits", "sources", "rho0", "horizon", "steps", "cells",
                 "method", "cfl"});
  NetworkScenario sc;
  const auto nodes = int_list(required(j, "nodes", path), child(path, "nodes"));
  std::vector<Link> links;
  const auto& lj = array_at(required(j, "links", path), child(path, "links"));
  for (std::size_t i = 0; i < lj.size(); ++i) {
    const auto pair = int_list(lj[i], child(child(path, "links"), i));
    if (pair.size() != 2) schema_fail(child(child(path, "links"), i), "expected [tail, head]");
    links.push_back({pair[0], pair[1]});
  }
  try {
    sc.net = RoadNetwork(nodes, links);
  } catch (const Error& e) {
    schema_fail(child(path, "links"), e.what());
  }

  if (const auto* cj = optional(j, "commodities")) {
    const auto cp = child(path, "commodities");
    for (std::size_t i = 0; i < array_at(*cj, cp).size(); ++i) {
      const auto p = child(cp, i);
      expect_object((*cj)[i], p, {"destination", "class"});
      Commodity c;
      c.destination = int_of((*cj)[i], "destination", p);
      if (!sc.net.has_node(c.destination)) schema_fail(child(p, "destination"), "unknown node");
      const auto cls = optional((*cj)[i], "class") ? as_string((*cj)[i]["class"], child(p, "class")) : "non_routed";
      if (cls == "routed") c.user_class = UserClass::routed;
      else if (cls == "non_routed") c.user_class = UserClass::non_routed;
      else schema_fail(child(p, "class"), "expected routed or non_routed");
      sc.commodities.push_back(c);
    }
  }
  const int K = static_cast<int>(sc.commodities.size());

  if (const auto* mj = optional(j, "models")) {
    const auto mp = child(path, "models");
    sc.models.clear();
    for (std::size_t i = 0; i < array_at(*mj, mp).size(); ++i) {
      const auto p = child(mp, i);
      expect_object((*mj)[i], p, {"law", "window"});
      sc.models.push_back({parse_law(required((*mj)[i], "law", p), child(p, "law")),
                           parse_window(optional((*mj)[i], "window"), child(p, "window"))});
    }
    if (sc.models.size() != 1 && static_cast<int>(sc.models.size()) != sc.net.link_count())
      schema_fail(mp, "expected one model or one per link");
  }

  sc.horizon = positive_number(j, "horizon", path);
  sc.solver.cells = positive_int(j, "cells", path, 200);
  sc.solver.method = parse_method(j, path);
  sc.solver.cfl = number_or(j, "cfl", path, sc.solver.cfl);
  if (optional(j, "steps")) {
    sc.steps = positive_int(j, "steps", path, 1);
  } else {
    // Steps from the fastest free-flow speed on the grid.
    double vmax = 0.0;
    for (const auto& m : sc.models) vmax = std::max(vmax, m.law(0.0, 0.0));
    sc.steps = steps_for_cfl(sc.horizon, sc.solver.cells, vmax, sc.solver.cfl);
  }
  if (const auto* s = optional(j, "splits")) parse_table(*s, child(path, "splits"), sc.splits, sc.net, std::max(K, 1));
  if (const auto* s = optional(j, "sources"))
    parse_table(*s, child(path, "sources"), sc.sources, sc.net, std::max(K, 1));
  if (const auto* r = optional(j, "rho0"))
    sc.rho0 = parse_rho0(*r, child(path, "rho0"), sc.net.link_count(), std::max(K, 1), sc.solver.cells);
  return sc;
}

// ---------------------------------------------------------------- common

std::uint64_t scenario_seed(const json& doc, const RunOptions& options) {
  if (options.seed) return *options.seed;
  if (const auto* s = optional(doc, "seed")) {
    if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<std::int64_t>() >= 0))
      schema_fail("/seed", "expected a nonnegative integer");
    return s->get<std::uint64_t>();
  }
  return 1;
}

std::string csv_name(const std::string& name) {
  // Artifact names are plain file names.
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
      schema_fail("/name", "names may only contain letters, digits, '_' and '-'");
  return name;
}

template <class Fn>
auto computing(const std::string& context, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == Errc::SchemaError || e.code() == Errc::ComputeError) throw;
    throw Error(Errc::ComputeError, context + ": " + e.what());
  }
}

// ---------------------------------------------------------------- simulate

struct TravelQuery {
  std::vector<LinkIndex> path;
  double entry = 0.0;
};

struct SimulatePlan {
  struct Variant {
    std::string name;
    NetworkScenario scenario;
  };
  std::vector<Variant> variants;
  int time_stride = 1;
  std::vector<TravelQuery> travel;
};

SimulatePlan parse_simulate(const json& doc) {
  expect_object(doc, "", {"kind", "seed", "network", "variants", "output"});
  SimulatePlan plan;
  const auto base = parse_network(required(doc, "network", ""), "/network");
  if (base.commodities.empty()) schema_fail("/network/commodities", "at least one commodity is required");
  const json& network_json = doc["network"];
  if (const auto* vj = optional(doc, "variants")) {
    for (std::size_t i = 0; i < array_at(*vj, "/variants").size(); ++i) {
      const auto p = child("/variants", i);
      expect_object((*vj)[i], p, {"name", "rho0", "sources"});
      json merged = network_json;
      if (const auto* r = optional((*vj)[i], "rho0")) merged["rho0"] = *r;
      if (const auto* s = optional((*vj)[i], "sources")) merged["sources"] = *s;
      plan.variants.push_back({csv_name(as_string(required((*vj)[i], "name", p), child(p, "name"))),
                               parse_network(merged, p)});
    }
    if (plan.variants.empty()) schema_fail("/variants", "expected at least one variant");
  } else {
    plan.variants.push_back({"base", base});
  }
  if (const auto* oj = optional(doc, "output")) {
    expect_object(*oj, "/output", {"time_stride", "travel_times"});
    plan.time_stride = positive_int(*oj, "time_stride", "/output", 1);
    if (const auto* tj = optional(*oj, "travel_times")) {
      for (std::size_t i = 0; i < array_at(*tj, "/output/travel_times").size(); ++i) {
        const auto p = child("/output/travel_times", i);
        expect_object((*tj)[i], p, {"path", "entry"});
        TravelQuery q{int_list(required((*tj)[i], "path", p), child(p, "path")), number((*tj)[i], "entry", p)};
        for (int a : q.path)
          if (a < 0 || a >= base.net.link_count()) schema_fail(child(p, "path"), "unknown link");
        plan.travel.push_back(std::move(q));
      }
    }
  }
  return plan;
}

std::string join_path(const std::vector<LinkIndex>& path) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) out += (i ? "-" : "") + std::to_string(path[i]);
  return out;
}

void run_simulate(const json& doc, RunResult& out) {
  const auto plan = parse_simulate(doc);
  for (const auto& v : plan.variants) {
    const auto st = computing("variant " + v.name, [&] { return simulate(v.scenario); });
    for (LinkIndex a = 0; a < st.net.link_count(); ++a)
      for (int k = 0; k < static_cast<int>(st.commodities.size()); ++k) {
        std::ostringstream os;
        write_link_csv(os, st, a, k, plan.time_stride);
        out.artifacts.push_back(
            {v.name + "_density_link" + std::to_string(a) + "_c" + std::to_string(k) + ".csv", os.str()});
      }
    std::ostringstream flux;
    write_flux_csv(flux, st);
    out.artifacts.push_back({v.name + "_flux.csv", flux.str()});

    std::ostringstream mb;
    mb << "commodity,initial,injected,exited,stored,relative_residual\n";
    const auto balances = mass_balance(st);
    for (std::size_t k = 0; k < balances.size(); ++k) {
      const auto& b = balances[k];
      mb << k << ',' << fmt(b.initial) << ',' << fmt(b.injected) << ',' << fmt(b.exited) << ',' << fmt(b.stored)
         << ',' << fmt(b.relative_residual()) << '\n';
    }
    out.artifacts.push_back({v.name + "_mass_balance.csv", mb.str()});

    if (!plan.travel.empty()) {
      std::ostringstream tt;
      tt << "path,entry_time,exit_time,travel_time,status\n";
      for (const auto& q : plan.travel) {
        tt << join_path(q.path) << ',' << fmt(q.entry) << ',';
        try {
          const double exit = travel_time(st, q.path, q.entry);
          tt << fmt(exit) << ',' << fmt(exit - q.entry) << ",ok\n";
        } catch (const Error& e) {
          if (e.code() != Errc::HorizonExceeded) throw Error(Errc::ComputeError, std::string("travel time: ") + e.what());
          tt << ",,horizon_exceeded\n";
        }
      }
      out.artifacts.push_back({v.name + "_travel_times.csv", tt.str()});
    }
  }
}

// ---------------------------------------------------------------- equilibrium

RoutingPolicy parse_policy(const json& j, const std::string& path, const RoadNetwork& net, NodeId destination) {
  expect_object(j, path,
                {"kind", "beta", "delay", "lookahead", "mask", "forecast_horizon", "congestion_weight", "history",
                 "departure_time"});
  RoutingPolicy p;
  try {
    p.kind = policy_kind_from_string(as_string(required(j, "kind", path), child(path, "kind")));
  } catch (const Error& e) {
    if (e.code() == Errc::SchemaError) throw;
    schema_fail(child(path, "kind"), e.what());
  }
  p.logit.beta = number_or(j, "beta", path, p.logit.beta);
  p.delay = number_or(j, "delay", path, p.delay);
  p.lookahead = int_or(j, "lookahead", path, p.lookahead);
  p.forecast_horizon = number_or(j, "forecast_horizon", path, p.forecast_horizon);
  p.congestion_weight = number_or(j, "congestion_weight", path, p.congestion_weight);
  p.departure_time = number_or(j, "departure_time", path, p.departure_time);
  if (const auto* m = optional(j, "mask")) {
    const auto mp = child(path, "mask");
    for (std::size_t i = 0; i < array_at(*m, mp).size(); ++i) p.mask.push_back(as_bool((*m)[i], child(mp, i)));
  }
  if (const auto* h = optional(j, "history")) {
    const auto hp = child(path, "history");
    expect_object(*h, hp, {"times", "costs"});
    p.history.times = number_list(required(*h, "times", hp), child(hp, "times"));
    const auto& rows = array_at(required(*h, "costs", hp), child(hp, "costs"));
    if (rows.size() != p.history.times.size()) schema_fail(child(hp, "costs"), "expected one row per time");
    p.history.costs = Eigen::ArrayXXd::Zero(static_cast<Eigen::Index>(rows.size()), net.link_count());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto row = number_list(rows[r], child(child(hp, "costs"), r));
      if (static_cast<int>(row.size()) != net.link_count())
        schema_fail(child(child(hp, "costs"), r), "expected one cost per link");
      for (std::size_t a = 0; a < row.size(); ++a)
        p.history.costs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a)) = row[a];
    }
  }
  try {
    p.validate(net, destination);
  } catch (const Error& e) {
    schema_fail(path, e.what());
  }
  return p;
}

struct EquilibriumPlan {
  EquilibriumSetup setup;
  std::vector<double> fractions;
};

EquilibriumPlan parse_equilibrium(const json& doc) {
  expect_object(doc, "",
                {"kind", "seed", "network", "entry_link", "destination", "demand", "routed_fractions", "rounds",
                 "used_threshold", "non_routed", "routed"});
  EquilibriumPlan plan;
  auto& s = plan.setup;
  s.base = parse_network(required(doc, "network", ""), "/network");
  s.entry_link = int_of(doc, "entry_link", "");
  if (s.entry_link < 0 || s.entry_link >= s.base.net.link_count()) schema_fail("/entry_link", "unknown link");
  s.destination = int_of(doc, "destination", "");
  if (!s.base.net.has_node(s.destination)) schema_fail("/destination", "unknown node");
  s.demand = parse_pieces(required(doc, "demand", ""), "/demand");
  s.rounds = positive_int(doc, "rounds", "", s.rounds);
  s.used_threshold = number_or(doc, "used_threshold", "", s.used_threshold);
  if (const auto* p = optional(doc, "non_routed")) s.non_routed = parse_policy(*p, "/non_routed", s.base.net, s.destination);
  if (const auto* p = optional(doc, "routed")) s.routed = parse_policy(*p, "/routed", s.base.net, s.destination);
  plan.fractions = optional(doc, "routed_fractions") ? number_list(doc["routed_fractions"], "/routed_fractions")
                                                     : std::vector<double>{0.0};
  for (std::size_t i = 0; i < plan.fractions.size(); ++i)
    if (plan.fractions[i] < 0.0 || plan.fractions[i] > 1.0)
      schema_fail(child("/routed_fractions", i), "must lie in [0, 1]");
  return plan;
}

void run_equilibrium(const json& doc, RunResult& out) {
  auto plan = parse_equilibrium(doc);
  std::ostringstream gaps, finals;
  gaps << "routed_fraction,round,gap,min_path_time\n";
  finals << "routed_fraction,final_gap,initial_gap\n";
  for (double alpha : plan.fractions) {
    plan.setup.routed_fraction = alpha;
    const auto r = computing("routed fraction " + fmt(alpha), [&] { return equilibrium_iterate(plan.setup); });
    for (std::size_t n = 0; n < r.gaps.size(); ++n)
      gaps << fmt(alpha) << ',' << n << ',' << fmt(r.gaps[n]) << ',' << fmt(r.min_path_times[n]) << '\n';
    finals << fmt(alpha) << ',' << fmt(r.gaps.back()) << ',' << fmt(r.gaps.front()) << '\n';
  }
  out.artifacts.push_back({"gaps.csv", gaps.str()});
  out.artifacts.push_back({"final_gaps.csv", finals.str()});
}

// ---------------------------------------------------------------- social-opt

struct SocialPlan {
  NetworkScenario base;
  DemandSpec demand;
  ControlParameterization controls;
  int budget = 100;
  SocialOptions options;
};

ControlParameterization parse_controls(const json& j, const std::string& path, const RoadNetwork& net, int K) {
  expect_object(j, path, {"knots", "splits", "sources"});
  ControlParameterization c;
  c.knots = number_list(required(j, "knots", path), child(path, "knots"));
  if (c.knots.size() < 2) schema_fail(child(path, "knots"), "expected at least two knots");
  for (std::size_t i = 1; i < c.knots.size(); ++i)
    if (c.knots[i] <= c.knots[i - 1]) schema_fail(child(child(path, "knots"), i), "knots must increase");
  const int P = c.intervals();
  if (const auto* sj = optional(j, "splits")) {
    const auto sp = child(path, "splits");
    for (std::size_t i = 0; i < array_at(*sj, sp).size(); ++i) {
      const auto p = child(sp, i);
      expect_object((*sj)[i], p, {"node", "commodity", "values"});
      ControlParameterization::SplitControl s;
      s.node = int_of((*sj)[i], "node", p);
      s.commodity = int_or((*sj)[i], "commodity", p, 0);
      if (!net.has_node(s.node)) schema_fail(child(p, "node"), "unknown node");
      if (s.commodity < 0 || s.commodity >= K) schema_fail(child(p, "commodity"), "unknown commodity");
      const auto deg = static_cast<Eigen::Index>(net.out_links(s.node).size());
      const auto& rows = array_at(required((*sj)[i], "values", p), child(p, "values"));
      if (static_cast<int>(rows.size()) != P) schema_fail(child(p, "values"), "expected one row per interval");
      s.values = Eigen::ArrayXXd::Zero(P, deg);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto row = number_list(rows[r], child(child(p, "values"), r));
        if (static_cast<Eigen::Index>(row.size()) != deg)
          schema_fail(child(child(p, "values"), r), "expected one entry per outgoing link");
        s.values.row(static_cast<Eigen::Index>(r)) = to_array(row).transpose();
      }
      c.splits.push_back(std::move(s));
    }
  }
  if (const auto* sj = optional(j, "sources")) {
    const auto sp = child(path, "sources");
    for (std::size_t i = 0; i < array_at(*sj, sp).size(); ++i) {
      const auto p = child(sp, i);
      expect_object((*sj)[i], p, {"node", "link", "commodity", "rates"});
      ControlParameterization::SourceControl s;
      s.node = int_of((*sj)[i], "node", p);
      s.link = int_of((*sj)[i], "link", p);
      s.commodity = int_or((*sj)[i], "commodity", p, 0);
      if (s.link < 0 || s.link >= net.link_count() || net.link(s.link).tail != s.node)
        schema_fail(child(p, "link"), "link does not leave this node");
      if (s.commodity < 0 || s.commodity >= K) schema_fail(child(p, "commodity"), "unknown commodity");
      const auto rates = number_list(required((*sj)[i], "rates", p), child(p, "rates"));
      if (static_cast<int>(rates.size()) != P) schema_fail(child(p, "rates"), "expected one rate per interval");
      s.rates = to_array(rates);
      c.sources.push_back(std::move(s));
    }
  }
  if (c.dimension() == 0) schema_fail(path, "no controls given");
  return c;
}

json controls_json(const ControlParameterization& c) {
  json out{{"knots", c.knots}, {"splits", json::array()}, {"sources", json::array()}};
  for (const auto& s : c.splits) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < s.values.rows(); ++r) {
      std::vector<double> row(s.values.cols());
      for (Eigen::Index a = 0; a < s.values.cols(); ++a) row[static_cast<std::size_t>(a)] = s.values(r, a);
      rows.push_back(row);
    }
    out["splits"].push_back({{"node", s.node}, {"commodity", s.commodity}, {"values", rows}});
  }
  for (const auto& s : c.sources)
    out["sources"].push_back({{"node", s.node},
                              {"link", s.link},
                              {"commodity", s.commodity},
                              {"rates", std::vector<double>(s.rates.begin(), s.rates.end())}});
  return out;
}

SocialPlan parse_social(const json& doc) {
  expect_object(doc, "", {"kind", "seed", "network", "demand", "controls", "budget", "optimizer"});
  SocialPlan plan;
  plan.base = parse_network(required(doc, "network", ""), "/network");
  const int K = static_cast<int>(plan.base.commodities.size());
  if (K == 0) schema_fail("/network/commodities", "at least one commodity is required");
  const auto& dj = array_at(required(doc, "demand", ""), "/demand");
  for (std::size_t i = 0; i < dj.size(); ++i) {
    const auto p = child("/demand", i);
    expect_object(dj[i], p, {"node", "link", "commodity", "total"});
    const int v = int_of(dj[i], "node", p), a = int_of(dj[i], "link", p), k = int_or(dj[i], "commodity", p, 0);
    if (a < 0 || a >= plan.base.net.link_count() || plan.base.net.link(a).tail != v)
      schema_fail(child(p, "link"), "link does not leave this node");
    if (k < 0 || k >= K) schema_fail(child(p, "commodity"), "unknown commodity");
    const double total = number(dj[i], "total", p);
    if (total < 0.0) schema_fail(child(p, "total"), "must be nonnegative");
    plan.demand.demand[{v, a, k}] = total;
  }
  plan.controls = parse_controls(required(doc, "controls", ""), "/controls", plan.base.net, K);
  if (std::abs(plan.controls.knots.front()) > 1e-12 || std::abs(plan.controls.knots.back() - plan.base.horizon) > 1e-12)
    schema_fail("/controls/knots", "knots must run from 0 to the horizon");
  plan.budget = positive_int(doc, "budget", "", plan.budget);
  if (const auto* oj = optional(doc, "optimizer")) {
    expect_object(*oj, "/optimizer", {"fd_step", "initial_step", "min_step", "max_step"});
    plan.options.fd_step = number_or(*oj, "fd_step", "/optimizer", plan.options.fd_step);
    plan.options.initial_step = number_or(*oj, "initial_step", "/optimizer", plan.options.initial_step);
    plan.options.min_step = number_or(*oj, "min_step", "/optimizer", plan.options.min_step);
    plan.options.max_step = number_or(*oj, "max_step", "/optimizer", plan.options.max_step);
  }
  return plan;
}

void run_social(const json& doc, const RunOptions& options, RunResult& out) {
  auto plan = parse_social(doc);
  plan.options.threads = options.threads;
  const auto r = computing("social optimum", [&] {
    return optimize_social(plan.base, plan.demand, plan.controls, plan.budget, plan.options);
  });
  std::ostringstream trace;
  trace << "iteration,simulations,objective,mean_step\n";
  for (std::size_t n = 0; n < r.trace.size(); ++n)
    trace << n << ',' << r.trace[n].simulations << ',' << fmt(r.trace[n].objective) << ','
          << fmt(r.trace[n].mean_step) << '\n';
  out.artifacts.push_back({"trace.csv", trace.str()});

  std::ostringstream summary;
  summary << "metric,value\n"
          << "initial_objective," << fmt(r.trace.front().objective) << '\n'
          << "best_objective," << fmt(r.objective) << '\n'
          << "simulations," << r.simulations << '\n'
          << "budget_exhausted," << (r.budget_exhausted ? 1 : 0) << '\n'
          << "local_minimum_only," << (r.local_minimum_only ? 1 : 0) << '\n';
  out.artifacts.push_back({"summary.csv", summary.str()});

  json replay = doc;
  replay["controls"] = controls_json(r.best);
  out.artifacts.push_back({"best_scenario.json", replay.dump(2) + "\n"});
}

// ---------------------------------------------------------------- platoon-flow

struct PlatoonPlan {
  FreightPair pair;
  VelocityField initial;
  int budget = 0;
  PlatoonOptions options;
  int time_stride = 1;
};

PlatoonPlan parse_platoon(const json& doc) {
  expect_object(doc, "", {"kind", "seed", "road", "background", "trucks", "window", "control", "optimizer", "output"});
  PlatoonPlan plan;
  auto& p = plan.pair;
  const auto& road = required(doc, "road", "");
  expect_object(road, "/road", {"x_lo", "x_hi", "horizon", "cells", "steps"});
  p.x_lo = number(road, "x_lo", "/road");
  p.x_hi = number(road, "x_hi", "/road");
  if (p.x_hi <= p.x_lo) schema_fail("/road/x_hi", "must exceed x_lo");
  p.horizon = positive_number(road, "horizon", "/road");
  p.cells = positive_int(road, "cells", "/road", p.cells);
  p.steps = positive_int(road, "steps", "/road", p.steps);

  p.solve_background = false;
  if (const auto* bj = optional(doc, "background")) {
    expect_object(*bj, "/background", {"law", "inflow", "rho0", "solve", "cells"});
    if (const auto* l = optional(*bj, "law")) p.background_law = parse_law(*l, "/background/law");
    if (const auto* u = optional(*bj, "inflow")) p.u1 = parse_pieces(*u, "/background/inflow");
    if (const auto* r = optional(*bj, "rho0")) p.rho0 = parse_profile(*r, "/background/rho0", p.x_lo, p.x_hi, p.cells);
    p.solve_background = bool_or(*bj, "solve", "/background", true);
    p.background_solver.cells = positive_int(*bj, "cells", "/background", p.cells);
  }
  const auto& tj = required(doc, "trucks", "");
  expect_object(tj, "/trucks", {"inflow", "q0"});
  if (const auto* u = optional(tj, "inflow")) p.u2 = parse_pieces(*u, "/trucks/inflow");
  p.q0 = parse_profile(required(tj, "q0", "/trucks"), "/trucks/q0", p.x_lo, p.x_hi, p.cells);
  if (const auto* wj = optional(doc, "window")) {
    expect_object(*wj, "/window", {"b0", "b1", "d0", "d1"});
    p.b0 = number_or(*wj, "b0", "/window", p.b0);
    p.b1 = number_or(*wj, "b1", "/window", p.b1);
    p.d0 = number_or(*wj, "d0", "/window", p.d0);
    p.d1 = number_or(*wj, "d1", "/window", p.d1);
  }

  const auto& cj = required(doc, "control", "");
  expect_object(cj, "/control", {"nt", "nx", "ny", "y_max", "lambda_min", "lambda_max", "lipschitz", "initial"});
  const int nt = positive_int(cj, "nt", "/control", 16), nx = positive_int(cj, "nx", "/control", 16);
  const int ny = positive_int(cj, "ny", "/control", 1);
  if (nt < 2 || nx < 2) schema_fail("/control", "nt and nx must be at least 2");
  const double lo = number(cj, "lambda_min", "/control"), hi = number(cj, "lambda_max", "/control");
  if (lo < 0.0 || hi < lo) schema_fail("/control/lambda_max", "need 0 <= lambda_min <= lambda_max");
  const double lip = number(cj, "lipschitz", "/control");
  if (lip < 0.0) schema_fail("/control/lipschitz", "must be nonnegative");
  const double init = number_or(cj, "initial", "/control", 0.5 * (lo + hi));
  plan.initial = VelocityField::constant(init, p.horizon, p.x_lo, p.x_hi, nt, nx, lo, hi, lip);
  if (ny > 1) {
    plan.initial.ny = ny;
    plan.initial.y_max = positive_number(cj, "y_max", "/control");
    plan.initial.values = Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(nt) * nx * ny, init);
  }
  if (ny > 1 && !p.solve_background) schema_fail("/control/ny", "a density-dependent speed needs the background solved");

  if (const auto* oj = optional(doc, "optimizer")) {
    expect_object(*oj, "/optimizer",
                  {"objective", "budget", "method", "fd_step", "initial_step", "min_step", "max_step"});
    plan.budget = int_or(*oj, "budget", "/optimizer", 0);
    if (plan.budget < 0) schema_fail("/optimizer/budget", "must be nonnegative");
    if (const auto* o = optional(*oj, "objective")) {
      const auto s = as_string(*o, "/optimizer/objective");
      if (s == "J1") plan.options.objective = PlatoonObjective::J1;
      else if (s == "J2") plan.options.objective = PlatoonObjective::J2;
      else schema_fail("/optimizer/objective", "expected J1 or J2");
    }
    if (plan.options.objective == PlatoonObjective::J2 && !p.solve_background)
      schema_fail("/optimizer/objective", "J2 needs the background solved");
    if (const auto* m = optional(*oj, "method")) {
      const auto s = as_string(*m, "/optimizer/method");
      if (s == "characteristics") plan.options.method = TruckMethod::characteristics;
      else if (s == "finite_volume") plan.options.method = TruckMethod::finite_volume;
      else schema_fail("/optimizer/method", "expected characteristics or finite_volume");
    }
    plan.options.fd_step = number_or(*oj, "fd_step", "/optimizer", plan.options.fd_step);
    plan.options.initial_step = number_or(*oj, "initial_step", "/optimizer", plan.options.initial_step);
    plan.options.min_step = number_or(*oj, "min_step", "/optimizer", plan.options.min_step);
    plan.options.max_step = number_or(*oj, "max_step", "/optimizer", plan.options.max_step);
  }
  if (const auto* oj = optional(doc, "output")) {
    expect_object(*oj, "/output", {"time_stride"});
    plan.time_stride = positive_int(*oj, "time_stride", "/output", 1);
  }
  return plan;
}

void run_platoon(const json& doc, const RunOptions& options, RunResult& out) {
  auto plan = parse_platoon(doc);
  plan.options.threads = options.threads;
  const auto initial = computing("initial speed field", [&] {
    return solve_freight_pair(plan.pair, project_velocity(plan.initial), plan.options.method);
  });
  PlatoonResult r;
  if (plan.budget > 0) {
    r = computing("speed optimization", [&] { return optimize_velocity(plan.pair, plan.initial, plan.budget, plan.options); });
  } else {
    r.best = project_velocity(plan.initial);
  }
  const auto best = computing("optimized speed field", [&] { return solve_freight_pair(plan.pair, r.best, plan.options.method); });

  const auto emit = [&](const std::string& tag, const VelocityField& lambda, const FreightSolution& s) {
    std::ostringstream lv, tv;
    write_velocity_csv(lv, lambda, s, plan.time_stride);
    write_truck_csv(tv, s, plan.time_stride);
    out.artifacts.push_back({"lambda_" + tag + ".csv", lv.str()});
    out.artifacts.push_back({"trucks_" + tag + ".csv", tv.str()});
  };
  emit("initial", project_velocity(plan.initial), initial);
  emit("optimized", r.best, best);

  std::ostringstream trace;
  trace << "iteration,simulations,objective\n";
  for (std::size_t n = 0; n < r.trace.size(); ++n)
    trace << n << ',' << r.trace[n].simulations << ',' << fmt(r.trace[n].objective) << '\n';
  out.artifacts.push_back({"trace.csv", trace.str()});

  const auto v0 = variance_objectives(initial), v1 = variance_objectives(best);
  const Eigen::ArrayXd q0 = initial.q.row(initial.steps()).transpose();
  const Eigen::ArrayXd q1 = best.q.row(best.steps()).transpose();
  std::ostringstream summary;
  summary << "metric,initial,optimized\n"
          << "J1," << fmt(v0.J1) << ',' << fmt(v1.J1) << '\n'
          << "J2," << fmt(v0.J2) << ',' << fmt(v1.J2) << '\n'
          << "final_spread," << fmt(spread(q0, initial.x_lo, initial.x_hi)) << ','
          << fmt(spread(q1, best.x_lo, best.x_hi)) << '\n'
          << "final_normalized_variance," << fmt(normalized_variance(q0, initial.x_lo, initial.x_hi)) << ','
          << fmt(normalized_variance(q1, best.x_lo, best.x_hi)) << '\n'
          << "mass_residual," << fmt(initial.mass_residual()) << ',' << fmt(best.mass_residual()) << '\n'
          << "simulations,0," << r.simulations << '\n'
          << "budget_exhausted,0," << (r.budget_exhausted ? 1 : 0) << '\n';
  out.artifacts.push_back({"summary.csv", summary.str()});
}

// ---------------------------------------------------------------- schedule

struct ScheduleRun {
  std::string tag;
  SchedulingGame game;
  Delays baseline;
};

struct SchedulePlan {
  std::vector<ScheduleRun> runs;
  double temperature = 1.0;
  std::int64_t iterations = 1000;
  bool count_visits = false;
  bool corridor = false;  // Sweden: report the Kiruna-Stockholm edges too
  unsigned key_bits = 512;
  bool verify_plaintext = false;
};

SchedulingGame parse_custom_game(const json& doc) {
  SchedulingGame game;
  const auto& gj = required(doc, "graph", "");
  expect_object(gj, "/graph", {"hubs", "edges"});
  const auto& hubs = array_at(required(gj, "hubs", "/graph"), "/graph/hubs");
  for (std::size_t i = 0; i < hubs.size(); ++i) game.graph.hubs.push_back(as_string(hubs[i], child("/graph/hubs", i)));
  const auto hub_index = [&](const json& j, const std::string& path) {
    const auto name = as_string(j, path);
    const auto it = std::find(game.graph.hubs.begin(), game.graph.hubs.end(), name);
    if (it == game.graph.hubs.end()) schema_fail(path, "unknown hub '" + name + "'");
    return static_cast<int>(it - game.graph.hubs.begin());
  };
  const auto& edges = array_at(required(gj, "edges", "/graph"), "/graph/edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto p = child("/graph/edges", i);
    expect_object(edges[i], p, {"from", "to", "weight", "dwell"});
    FreightGraph::Edge e;
    e.from = hub_index(required(edges[i], "from", p), child(p, "from"));
    e.to = hub_index(required(edges[i], "to", p), child(p, "to"));
    e.dwell = positive_int(edges[i], "dwell", p, 1);
    e.weight = number_or(edges[i], "weight", p, static_cast<double>(e.dwell));
    game.graph.edges.push_back(e);
  }
  try {
    game.graph.validate();
  } catch (const Error& e) {
    schema_fail("/graph", e.what());
  }
  game.horizon = positive_int(doc, "horizon", "", 1);
  game.gamma = number_or(doc, "gamma", "", 1.0);
  if (const auto* r = optional(doc, "reward")) game.reward = number_list(*r, "/reward");

  const auto& vj = array_at(required(doc, "vehicles", ""), "/vehicles");
  for (std::size_t i = 0; i < vj.size(); ++i) {
    const auto p = child("/vehicles", i);
    expect_object(vj[i], p, {"hubs", "walk", "start", "tau_low", "tau_high", "delay_cost"});
    const int start = int_or(vj[i], "start", p, 0);
    const int lo = int_or(vj[i], "tau_low", p, 0), hi = int_or(vj[i], "tau_high", p, 0);
    VehicleAssignment v;
    if (const auto* h = optional(vj[i], "hubs")) {
      if (optional(vj[i], "walk")) schema_fail(child(p, "walk"), "give either hubs or walk");
      std::vector<int> path;
      for (std::size_t k = 0; k < array_at(*h, child(p, "hubs")).size(); ++k)
        path.push_back(hub_index((*h)[k], child(child(p, "hubs"), k)));
      try {
        v = VehicleAssignment::from_hubs(game.graph, path, start, lo, hi);
      } catch (const Error& e) {
        schema_fail(child(p, "hubs"), e.what());
      }
    } else {
      v.walk = int_list(required(vj[i], "walk", p), child(p, "walk"));
      v.start = start;
      v.tau_low = lo;
      v.tau_high = hi;
    }
    if (const auto* c = optional(vj[i], "delay_cost")) v.delay_cost = number_list(*c, child(p, "delay_cost"));
    game.vehicles.push_back(std::move(v));
  }
  try {
    game.validate();
  } catch (const Error& e) {
    schema_fail("/vehicles", e.what());
  }
  return game;
}

SchedulePlan parse_schedule(const json& doc, bool private_run) {
  if (private_run)
    expect_object(doc, "",
                  {"kind", "seed", "graph", "vehicles", "horizon", "gamma", "reward", "sweden", "learning", "key_bits",
                   "verify_plaintext"});
  else
    expect_object(doc, "", {"kind", "seed", "graph", "vehicles", "horizon", "gamma", "reward", "sweden", "learning"});
  SchedulePlan plan;
  if (const auto* sj = optional(doc, "sweden")) {
    if (optional(doc, "graph") || optional(doc, "vehicles"))
      schema_fail("/sweden", "give either sweden or graph and vehicles");
    expect_object(*sj, "/sweden", {"kiruna_vehicles", "ostersund_vehicles", "gamma", "max_delays"});
    SwedenConfig c;
    c.kiruna_vehicles = int_or(*sj, "kiruna_vehicles", "/sweden", c.kiruna_vehicles);
    c.ostersund_vehicles = int_or(*sj, "ostersund_vehicles", "/sweden", c.ostersund_vehicles);
    if (c.kiruna_vehicles < 0 || c.ostersund_vehicles < 0 || c.kiruna_vehicles + c.ostersund_vehicles == 0)
      schema_fail("/sweden", "need at least one vehicle");
    c.gamma = number_or(*sj, "gamma", "/sweden", c.gamma);
    const auto delays = optional(*sj, "max_delays") ? int_list((*sj)["max_delays"], "/sweden/max_delays")
                                                    : std::vector<int>{c.max_delay};
    for (std::size_t i = 0; i < delays.size(); ++i) {
      if (delays[i] < 0) schema_fail(child("/sweden/max_delays", i), "must be nonnegative");
      c.max_delay = delays[i];
      auto game = build_sweden_scenario(c);
      auto base = game.earliest();
      plan.runs.push_back({"max_delay_" + std::to_string(delays[i]), std::move(game), std::move(base)});
    }
    plan.corridor = c.kiruna_vehicles > 0;
  } else {
    auto game = parse_custom_game(doc);
    auto base = game.earliest();
    plan.runs.push_back({"run", std::move(game), std::move(base)});
  }
  const auto& lj = required(doc, "learning", "");
  expect_object(lj, "/learning", {"temperature", "iterations", "count_visits"});
  plan.temperature = positive_number(lj, "temperature", "/learning");
  plan.iterations = as_integer(required(lj, "iterations", "/learning"), "/learning/iterations");
  if (plan.iterations < 0) schema_fail("/learning/iterations", "must be nonnegative");
  plan.count_visits = bool_or(lj, "count_visits", "/learning", false);
  if (private_run) {
    const int bits = int_or(doc, "key_bits", "", 512);
    if (bits < 64 || bits % 2) schema_fail("/key_bits", "expected an even number of bits, at least 64");
    plan.key_bits = static_cast<unsigned>(bits);
    plan.verify_plaintext = bool_or(doc, "verify_plaintext", "", false);
    for (const auto& r : plan.runs)
      if (r.game.size() < 2) schema_fail("/vehicles", "the ring needs at least two vehicles");
  }
  return plan;
}

std::string delays_key(const Delays& tau) {
  std::string out;
  for (std::size_t i = 0; i < tau.size(); ++i) out += (i ? " " : "") + std::to_string(tau[i]);
  return out;
}

void run_schedule(const json& doc, std::uint64_t seed, bool private_run, RunResult& out) {
  const auto plan = parse_schedule(doc, private_run);
  std::ostringstream summary;
  summary << "run,vehicles,components,initial_cost,best_cost,final_cost,platooning_proxy";
  if (private_run) summary << ",ring_passes,matches_plaintext";
  summary << '\n';
  for (const auto& run : plan.runs) {
    const auto& game = run.game;
    LearningOptions lo;
    lo.record_trajectory = true;
    lo.count_visits = plan.count_visits;
    std::optional<PrivateCounts> counts;
    CountSource source;
    if (private_run) {
      counts.emplace(game, plan.key_bits, seed);
      source = counts->source();
    }
    const auto r = computing("learning " + run.tag, [&] {
      return run_learning(game, run.baseline, plan.temperature, plan.iterations, seed, lo,
                          private_run ? &source : nullptr);
    });
    bool matches = true;
    if (private_run && plan.verify_plaintext) {
      const auto plain = run_learning(game, run.baseline, plan.temperature, plan.iterations, seed, lo);
      matches = plain.trajectory == r.trajectory && plain.costs == r.costs;
    }

    std::ostringstream trace;
    trace << "iteration,cost\n";
    for (std::size_t n = 0; n < r.costs.size(); ++n) trace << n << ',' << fmt(r.costs[n]) << '\n';
    out.artifacts.push_back({run.tag + "_cost_trace.csv", trace.str()});

    std::ostringstream delays;
    delays << "vehicle,best_delay,final_delay\n";
    for (int i = 0; i < game.size(); ++i)
      delays << i << ',' << r.best[static_cast<std::size_t>(i)] << ','
             << r.trajectory.back()[static_cast<std::size_t>(i)] << '\n';
    out.artifacts.push_back({run.tag + "_delays.csv", delays.str()});

    const auto base_hist = pair_distance_histogram(game, run.baseline);
    const auto best_hist = pair_distance_histogram(game, r.best);
    const auto ratio = distance_ratio(best_hist, base_hist);
    std::vector<int> corridor;
    if (plan.corridor) corridor = kiruna_stockholm_edges(game);
    std::ostringstream rc;
    rc << "edge,from,to,corridor,distance,scheduled_pairs,baseline_pairs,ratio\n";
    for (std::size_t e = 0; e < game.graph.edges.size(); ++e) {
      std::map<int, int> distances;
      for (const auto& [d, n] : base_hist[e]) distances[d] = 1;
      for (const auto& [d, n] : best_hist[e]) distances[d] = 1;
      const bool on = std::find(corridor.begin(), corridor.end(), static_cast<int>(e)) != corridor.end();
      for (const auto& [d, unused] : distances) {
        const auto count = [&](const std::map<int, std::int64_t>& m) {
          const auto it = m.find(d);
          return it == m.end() ? std::int64_t{0} : it->second;
        };
        rc << e << ',' << game.graph.hubs[static_cast<std::size_t>(game.graph.edges[e].from)] << ','
           << game.graph.hubs[static_cast<std::size_t>(game.graph.edges[e].to)] << ',' << (on ? 1 : 0) << ',' << d
           << ',' << count(best_hist[e]) << ',' << count(base_hist[e]) << ',';
        const auto it = ratio[e].find(d);
        if (it != ratio[e].end()) rc << fmt(it->second);
        rc << '\n';
      }
    }
    out.artifacts.push_back({run.tag + "_distance_ratio.csv", rc.str()});

    if (plan.count_visits) {
      std::ostringstream visits;
      visits << "state,count\n";
      for (const auto& [state, n] : r.visits) visits << delays_key(state) << ',' << n << '\n';
      out.artifacts.push_back({run.tag + "_visits.csv", visits.str()});
    }

    summary << run.tag << ',' << game.size() << ',' << decompose(game).size() << ',' << fmt(r.costs.front()) << ','
            << fmt(r.best_cost) << ',' << fmt(r.costs.back()) << ',';
    // Undefined without baseline platoons; left blank.
    try {
      summary << fmt(platooning_proxy(best_hist, base_hist));
    } catch (const Error&) {
    }
    if (private_run) summary << ',' << counts->passes() << ',' << (plan.verify_plaintext ? (matches ? "1" : "0") : "");
    summary << '\n';
  }
  out.artifacts.push_back({"summary.csv", summary.str()});
}

// ---------------------------------------------------------------- dispatch

json parse_document(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw Error(Errc::SchemaError, "line " + std::to_string(line) + ", column " + std::to_string(column) +
                                       ": malformed JSON");
  }
}

ScenarioKind kind_of(const json& doc) {
  if (!doc.is_object()) schema_fail("", "expected an object");
  return scenario_kind_from_string(as_string(required(doc, "kind", ""), "/kind"));
}

void check_payload(const json& doc, ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::simulate: parse_simulate(doc); break;
    case ScenarioKind::equilibrium: parse_equilibrium(doc); break;
    case ScenarioKind::social_opt: parse_social(doc); break;
    case ScenarioKind::platoon_flow: parse_platoon(doc); break;
    case ScenarioKind::schedule: parse_schedule(doc, false); break;
    case ScenarioKind::schedule_private: parse_schedule(doc, true); break;
  }
}

}  // namespace

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::simulate: return "simulate";
    case ScenarioKind::equilibrium: return "equilibrium";
    case ScenarioKind::social_opt: return "social-opt";
    case ScenarioKind::platoon_flow: return "platoon-flow";
    case ScenarioKind::schedule: return "schedule";
    case ScenarioKind::schedule_private: return "schedule-private";
  }
  return "unknown";
}

ScenarioKind scenario_kind_from_string(const std::string& name) {
  for (auto k : {ScenarioKind::simulate, ScenarioKind::equilibrium, ScenarioKind::social_opt,
                 ScenarioKind::platoon_flow, ScenarioKind::schedule, ScenarioKind::schedule_private})
    if (to_string(k) == name) return k;
  schema_fail("/kind", "unknown scenario kind '" + name + "'");
}

ScenarioKind validate_scenario(std::string_view text) {
  const auto doc = parse_document(text);
  const auto kind = kind_of(doc);
  check_payload(doc, kind);
  return kind;
}

RunResult run_scenario(std::string_view text, const RunOptions& options) {
  const auto doc = parse_document(text);
  RunResult out;
  out.kind = kind_of(doc);
  out.seed = scenario_seed(doc, options);
  check_payload(doc, out.kind);
  switch (out.kind) {
    case ScenarioKind::simulate: run_simulate(doc, out); break;
    case ScenarioKind::equilibrium: run_equilibrium(doc, out); break;
    case ScenarioKind::social_opt: run_social(doc, options, out); break;
    case ScenarioKind::platoon_flow: run_platoon(doc, options, out); break;
    case ScenarioKind::schedule: run_schedule(doc, out.seed, false, out); break;
    case ScenarioKind::schedule_private: run_schedule(doc, out.seed, true, out); break;
  }
  return out;
}

std::string run_manifest(const RunResult& result, std::string_view scenario_text, const ManifestInfo& info) {
  json m;
  m["kind"] = to_string(result.kind);
  m["scenario"] = info.scenario_path;
  m["scenario_fnv1a"] = hex64(fnv1a(scenario_text));
  m["seed"] = result.seed;
  m["threads"] = info.threads;
  m["version"] = kLibraryVersion;
  m["started_at"] = info.started_at;
  m["wall_seconds"] = info.wall_seconds;
  m["artifacts"] = json::array();
  for (const auto& a : result.artifacts)
    m["artifacts"].push_back({{"name", a.name}, {"bytes", a.content.size()}, {"fnv1a", hex64(fnv1a(a.content))}});
  return m.dump(2) + "\n";
}

std::string error_json(std::string_view code, std::string_view message) {
  return json{{"error", code}, {"message", message}}.dump() + "\n";
}

}  // namespace mobility
