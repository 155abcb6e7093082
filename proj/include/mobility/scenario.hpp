#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mobility {

enum class ScenarioKind { simulate, equilibrium, social_opt, platoon_flow, schedule, schedule_private };

std::string to_string(ScenarioKind kind);
/// Accepts "simulate", "equilibrium", "social-opt", "platoon-flow",
/// "schedule", "schedule-private"; throws SchemaError otherwise.
ScenarioKind scenario_kind_from_string(const std::string& name);

/// One output file, kept in memory until the caller writes it.
struct Artifact {
  std::string name;
  std::string content;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;  // overrides the scenario's seed
  int threads = 1;
};

struct RunResult {
  ScenarioKind kind = ScenarioKind::simulate;
  std::uint64_t seed = 0;
  std::vector<Artifact> artifacts;
};

/// Parses and schema-checks a scenario document without computing anything.
/// Malformed JSON reports line and column; schema problems report the JSON
/// pointer of the offending field. Both throw SchemaError.
ScenarioKind validate_scenario(std::string_view text);

/// Validates, then runs. Module failures during the computation are
/// rethrown as ComputeError with the original message attached.
RunResult run_scenario(std::string_view text, const RunOptions& options = {});

struct ManifestInfo {
  std::string scenario_path;
  int threads = 1;
  double wall_seconds = 0.0;
  std::string started_at;  // ISO 8601, UTC
};

/// Run manifest (JSON): kind, seed, threads, FNV-1a of the scenario text and
/// of every artifact, library version, wall time.
std::string run_manifest(const RunResult& result, std::string_view scenario_text, const ManifestInfo& info);

/// Machine-readable failure record: {"error": code, "message": text}.
std::string error_json(std::string_view code, std::string_view message);

inline constexpr const char* kLibraryVersion = "1.0.0";

}  // namespace mobility
