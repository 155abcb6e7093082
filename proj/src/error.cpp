#include "mobility/error.hpp"

namespace mobility {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::Disconnected: return "Disconnected";
    case Errc::SplitRowInvalid: return "SplitRowInvalid";
    case Errc::InvalidScenario: return "InvalidScenario";
    case Errc::InvalidVelocity: return "InvalidVelocity";
    case Errc::FixedPointDiverged: return "FixedPointDiverged";
    case Errc::CflViolated: return "CflViolated";
    case Errc::HorizonExceeded: return "HorizonExceeded";
    case Errc::NoPath: return "NoPath";
    case Errc::PathLimitExceeded: return "PathLimitExceeded";
    case Errc::InsufficientHistory: return "InsufficientHistory";
    case Errc::LambdaOutOfSet: return "LambdaOutOfSet";
    case Errc::InfeasibleDelay: return "InfeasibleDelay";
    case Errc::InstanceTooLarge: return "InstanceTooLarge";
    case Errc::PrimeGenerationFailed: return "PrimeGenerationFailed";
    case Errc::PlaintextOutOfRange: return "PlaintextOutOfRange";
    case Errc::KeyMismatch: return "KeyMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::SchemaError: return "SchemaError";
    case Errc::ComputeError: return "ComputeError";
  }
  return "Unknown";
}

}  // namespace mobility
