#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ctxrisk {

enum class ErrorCode {
  MalformedLine,
  UnknownAction,
  MissingField,
  Io,
  UnknownLocation,
  UnknownFactor,
  EmptyInput,
  KTooLarge,
  NoPresentFeatures,
  LengthMismatch,
  DimensionMismatch,
  InvalidConfig,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code. Parse errors also carry the
/// 1-based input line (0 when not applicable).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::size_t line = 0);

  ErrorCode code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

enum class WarningCode {
  ExitWithoutPresence,
  ReadWithUnplacedDevice,
  ImplicitMove,
  DuplicateEnter,
  DegenerateDistribution,
  UnknownMember,
  MissingCoupling,
  SmallPopulation,
  CollapsedComponent,
};

std::string_view to_string(WarningCode code);

struct Warning {
  WarningCode code;
  std::string detail;
};

using Warnings = std::vector<Warning>;

}  // namespace ctxrisk
