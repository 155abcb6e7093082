#include "mobility/error.hpp"
#include "mobility/scenario.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace mobility;

namespace {

struct Args {
  std::string scenario;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool validate_only = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::SchemaError, path + ": cannot open scenario file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error(Errc::ComputeError, path.string() + ": cannot write");
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int run(const std::string& command, const Args& args) {
  const std::string text = read_file(args.scenario);
  const ScenarioKind kind = validate_scenario(text);
  if (command != "validate" && to_string(kind) != command)
    throw Error(Errc::SchemaError, "/kind: scenario is '" + to_string(kind) + "' but the subcommand is '" + command + "'");
  if (command == "validate" || args.validate_only) {
    std::cout << args.scenario << ": valid " << to_string(kind) << " scenario\n";
    return 0;
  }

  RunOptions options;
  options.seed = args.seed;
  options.threads = args.threads;
  ManifestInfo info;
  info.scenario_path = args.scenario;
  info.threads = args.threads;
  info.started_at = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  const RunResult result = run_scenario(text, options);
  info.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(args.out);
  for (const auto& a : result.artifacts) write_file(fs::path(args.out) / a.name, a.content);
  write_file(fs::path(args.out) / "manifest.json", run_manifest(result, text, info));
  std::cout << "wrote " << result.artifacts.size() << " artifacts to " << args.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic flow, routing, platooning and scheduling scenarios"};
  app.require_subcommand(1);
  Args args;

  const auto add = [&](const std::string& name, const std::string& description, bool runs) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--scenario", args.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    if (runs) {
      sub->add_option("--out", args.out, "Output directory")->capture_default_str();
      sub->add_option("--seed", args.seed, "Seed overriding the scenario's");
      sub->add_option("--threads", args.threads, "Worker threads for finite-difference probes")
          ->check(CLI::PositiveNumber)
          ->capture_default_str();
      sub->add_flag("--validate-only", args.validate_only, "Check the scenario and exit");
    }
    return sub;
  };
  add("simulate", "Simulate a road network", true);
  add("equilibrium", "Day-to-day routing iteration over routed fractions", true);
  add("social-opt", "Optimize splits and departures against the backlog", true);
  add("platoon-flow", "Optimize truck speed for platoon formation", true);
  add("schedule", "Log-linear learning of departure delays", true);
  add("schedule-private", "Learning with encrypted occupancy counts", true);
  add("validate", "Schema check only", false);

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    return run(command, args);
  } catch (const Error& e) {
    const std::string what = e.what();
    const auto code = to_string(e.code());
    std::cerr << error_json(code, what.substr(code.size() + 2));
    return e.code() == Errc::SchemaError ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << error_json("ComputeError", e.what());
    return 3;
  }
}
