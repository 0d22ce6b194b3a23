#include "sentdecomp/error.hpp"

namespace sentdecomp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingFile: return "missing_file";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kInvalidFormat: return "invalid_format";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kLabelRange: return "label_range";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kMissingArtifact: return "missing_artifact";
    case ErrorCode::kInfeasible: return "infeasible";
  }
  return "unknown";
}

}  // namespace sentdecomp
