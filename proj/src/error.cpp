#include "ctxrisk/error.hpp"

namespace ctxrisk {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::UnknownAction: return "UnknownAction";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::Io: return "Io";
    case ErrorCode::UnknownLocation: return "UnknownLocation";
    case ErrorCode::UnknownFactor: return "UnknownFactor";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::NoPresentFeatures: return "NoPresentFeatures";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::string_view to_string(WarningCode code) {
  switch (code) {
    case WarningCode::ExitWithoutPresence: return "ExitWithoutPresence";
    case WarningCode::ReadWithUnplacedDevice: return "ReadWithUnplacedDevice";
    case WarningCode::ImplicitMove: return "ImplicitMove";
    case WarningCode::DuplicateEnter: return "DuplicateEnter";
    case WarningCode::DegenerateDistribution: return "DegenerateDistribution";
    case WarningCode::UnknownMember: return "UnknownMember";
    case WarningCode::MissingCoupling: return "MissingCoupling";
    case WarningCode::SmallPopulation: return "SmallPopulation";
    case WarningCode::CollapsedComponent: return "CollapsedComponent";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
      code_(code),
      line_(line) {}

}  // namespace ctxrisk
