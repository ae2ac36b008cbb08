#include "advbench/error.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kDegenerateGradient: return "degenerate_gradient";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kBudgetViolation: return "budget_violation";
  }
  return "unknown";
}

std::string Error::line() const {
  std::string msg = what();
  for (char& c : msg) {
    if (c == '\n') c = ' ';
  }
  return "error code=" + std::string(to_string(code_)) + " message=" + msg;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t checked_numel(const Shape& shape) {
  if (shape.empty()) throw Error(ErrorCode::kInvalidArgument, "tensor rank must be >= 1");
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "tensor extents must be >= 1, got " + shape_string(shape));
    }
    n *= e;
  }
  return n;
}

}  // namespace advbench
