#include "virso/error.hpp"

namespace virso {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidParameter: return "invalid-parameter";
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kDegenerateDensity: return "degenerate-density";
    case ErrorKind::kDegenerateGraph: return "degenerate-graph";
    case ErrorKind::kConvergenceFailure: return "convergence-failure";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kInvalidUsage: return "invalid-usage";
    case ErrorKind::kUndefinedMetric: return "undefined-metric";
    case ErrorKind::kConfig: return "config-error";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kMissingArtifact: return "missing-artifact";
    case ErrorKind::kIo: return "io-error";
  }
  return "unknown";
}

bool is_validation_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidParameter:
    case ErrorKind::kInvalidInput:
    case ErrorKind::kShapeMismatch:
    case ErrorKind::kConfig:
    case ErrorKind::kMissingArtifact:
      return true;
    default:
      return false;
  }
}

}  // namespace virso
