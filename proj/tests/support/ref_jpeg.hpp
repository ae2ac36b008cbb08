#pragma once

#include "advbench/tensor.hpp"

namespace testsupport {

// Baseline encode + decode through libjpeg at the given quality: float DCT,
// no chroma subsampling, 8-bit output. Used only as a test oracle.
advbench::Tensor reference_jpeg(const advbench::Tensor& image, int quality);

}  // namespace testsupport
