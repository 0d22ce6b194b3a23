#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sentdecomp {

enum class ErrorCode {
  kMissingFile,
  kIo,
  kInvalidFormat,
  kDimensionMismatch,
  kLabelRange,
  kNonFinite,
  kInvalidArgument,
  kShapeMismatch,
  kDegenerate,
  kDivergence,
  kConfig,
  kMissingArtifact,
  kInfeasible,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries the module that raised it and a
// machine-readable code; the CLI maps codes onto process exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string module, const std::string& message)
      : std::runtime_error(message), code_(code), module_(std::move(module)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace sentdecomp
