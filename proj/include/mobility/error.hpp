#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mobility {

enum class Errc {
  CycleDetected,
  Disconnected,
  SplitRowInvalid,
  InvalidScenario,
  InvalidVelocity,
  FixedPointDiverged,
  CflViolated,
  HorizonExceeded,
  NoPath,
  PathLimitExceeded,
  InsufficientHistory,
  LambdaOutOfSet,
  InfeasibleDelay,
  InstanceTooLarge,
  PrimeGenerationFailed,
  PlaintextOutOfRange,
  KeyMismatch,
  DimensionMismatch,
  SchemaError,
  ComputeError,
};

std::string_view to_string(Errc code) noexcept;

/// All library failures are reported through this exception; `code()` is the
/// machine-readable kind, `what()` carries the context.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace mobility
