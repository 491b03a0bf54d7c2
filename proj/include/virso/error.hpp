#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace virso {

enum class ErrorKind {
  kInvalidParameter,
  kInvalidInput,
  kDegenerateDensity,
  kDegenerateGraph,
  kConvergenceFailure,
  kShapeMismatch,
  kInvalidUsage,
  kUndefinedMetric,
  kConfig,
  kDivergence,
  kMissingArtifact,
  kIo,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. The kind is stable and testable; the
/// message carries the human-readable context (node index, parameter name...).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Validation errors map to CLI exit code 1, everything else to 2.
bool is_validation_error(ErrorKind kind);

}  // namespace virso
