#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advbench {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kNonFinite,
  kIo,
  kFormat,
  kDivergence,
  kDegenerateGradient,
  kEmptyDataset,
  kUsage,
  kBudgetViolation,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // "error code=<code> message=<text>" on a single line.
  std::string line() const;

 private:
  ErrorCode code_;
};

}  // namespace advbench
