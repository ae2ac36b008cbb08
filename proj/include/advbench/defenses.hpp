#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "advbench/tensor.hpp"

namespace advbench {

enum class DefenseMethod { kNone, kJpeg, kTvm };

std::string to_string(DefenseMethod method);
DefenseMethod parse_defense_method(const std::string& name);

struct DefenseSpec {
  DefenseMethod method = DefenseMethod::kNone;
  int quality = 75;              // JPEG, 1..100
  float lambda = 0.03f;          // TVM regularization weight
  std::size_t iterations = 200;  // TVM solver iterations
  float step = 0.05f;            // TVM primal step size
  float dropout_rate = 0.0f;     // TVM pixel dropout in [0, 1)
  std::uint64_t seed = 0;

  void validate() const;
  // "" for None, "q=75" for JPEG, "lambda=0.03" for TVM.
  std::string param_string() const;

  static DefenseSpec none() { return {}; }
  static DefenseSpec jpeg(int quality);
  static DefenseSpec tvm(float lambda, std::size_t iterations = 200);
};

// 8x8 quantization table in natural (row-major) order, entries in [1, 255].
struct QuantTable {
  std::array<int, 64> entries{};
};

QuantTable luminance_table(int quality);
QuantTable chrominance_table(int quality);

// Lossy JPEG transform without entropy coding: level shift, 8x8 DCT,
// quantize/dequantize, inverse DCT. Blocks are padded by edge replication.
// One channel uses the luminance table; three channels go through YCbCr
// with luminance/chrominance tables (no subsampling). Any other channel
// count is treated as independent luminance planes.
Tensor jpeg_roundtrip(const Tensor& image, int quality);

// Anisotropic total variation of a C x H x W image, summed over channels.
double total_variation(const Tensor& image);

// 0.5 * sum(mask * (z - x)^2) + lambda * TV(z). Empty mask means all ones.
double tv_objective(const Tensor& z, const Tensor& x, const Tensor* mask, double lambda);

// Seeded Bernoulli(1 - dropout_rate) keep-mask over every entry of `shape`.
Tensor dropout_mask(const Shape& shape, float dropout_rate, std::uint64_t seed);

// Minimizes tv_objective over z in [0,1] with a primal-dual solver and
// returns the best-objective iterate seen (the input itself counts as
// iterate zero).
Tensor tvm_denoise(const Tensor& image, float lambda, std::size_t iterations, float step = 0.05f,
                   float dropout_rate = 0.0f, std::uint64_t seed = 0);

// Per-iteration best objective trace of the same solve (length
// iterations + 1, entry 0 is the objective at the input).
std::vector<double> tvm_best_objective_trace(const Tensor& image, float lambda,
                                             std::size_t iterations, float step = 0.05f,
                                             float dropout_rate = 0.0f, std::uint64_t seed = 0);

Tensor apply_defense(const DefenseSpec& spec, const Tensor& image);

// Peak signal-to-noise ratio in dB for signals in [0, 1].
double psnr(const Tensor& a, const Tensor& b);

}  // namespace advbench
