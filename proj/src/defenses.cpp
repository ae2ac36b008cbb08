#include "advbench/defenses.hpp"

#include <cmath>
#include <sstream>

namespace advbench {

std::string to_string(DefenseMethod method) {
  switch (method) {
    case DefenseMethod::kNone: return "none";
    case DefenseMethod::kJpeg: return "jpeg";
    case DefenseMethod::kTvm: return "tvm";
  }
  return "unknown";
}

DefenseMethod parse_defense_method(const std::string& name) {
  if (name == "none") return DefenseMethod::kNone;
  if (name == "jpeg") return DefenseMethod::kJpeg;
  if (name == "tvm") return DefenseMethod::kTvm;
  throw Error(ErrorCode::kInvalidArgument, "unknown defense method '" + name + "'");
}

void DefenseSpec::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  switch (method) {
    case DefenseMethod::kNone:
      break;
    case DefenseMethod::kJpeg:
      if (quality < 1 || quality > 100) bad("JPEG quality must lie in [1, 100]");
      break;
    case DefenseMethod::kTvm:
      if (!(lambda > 0.0f) || !std::isfinite(lambda)) bad("TVM lambda must be finite and > 0");
      if (iterations < 1) bad("TVM iterations must be >= 1");
      if (!(step > 0.0f) || !std::isfinite(step)) bad("TVM step must be > 0");
      if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) bad("TVM dropout_rate must lie in [0, 1)");
      break;
  }
}

std::string DefenseSpec::param_string() const {
  std::ostringstream os;
  switch (method) {
    case DefenseMethod::kNone:
      break;
    case DefenseMethod::kJpeg:
      os << "q=" << quality;
      break;
    case DefenseMethod::kTvm:
      os << "lambda=" << lambda;
      if (dropout_rate > 0.0f) os << ";dropout=" << dropout_rate;
      break;
  }
  return os.str();
}

DefenseSpec DefenseSpec::jpeg(int quality) {
  DefenseSpec s;
  s.method = DefenseMethod::kJpeg;
  s.quality = quality;
  return s;
}

DefenseSpec DefenseSpec::tvm(float lambda, std::size_t iterations) {
  DefenseSpec s;
  s.method = DefenseMethod::kTvm;
  s.lambda = lambda;
  s.iterations = iterations;
  return s;
}

Tensor apply_defense(const DefenseSpec& spec, const Tensor& image) {
  spec.validate();
  switch (spec.method) {
    case DefenseMethod::kNone:
      return image;
    case DefenseMethod::kJpeg:
      return jpeg_roundtrip(image, spec.quality);
    case DefenseMethod::kTvm:
      return tvm_denoise(image, spec.lambda, spec.iterations, spec.step, spec.dropout_rate,
                         spec.seed);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown defense method");
}

}  // namespace advbench
