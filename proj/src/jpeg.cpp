#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "advbench/defenses.hpp"

namespace advbench {

namespace {

// Baseline tables from the JPEG standard, Annex K.1 / K.2.
constexpr std::array<int, 64> kLuminanceBase = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChrominanceBase = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

void require_quality(int quality) {
  if (quality < 1 || quality > 100) {
    throw Error(ErrorCode::kInvalidArgument,
                "JPEG quality must lie in [1, 100], got " + std::to_string(quality));
  }
}

QuantTable scaled(const std::array<int, 64>& base, int quality) {
  require_quality(quality);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  QuantTable t;
  for (std::size_t i = 0; i < 64; ++i) {
    t.entries[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  }
  return t;
}

using Block = Eigen::Matrix<double, 8, 8, Eigen::RowMajor>;

// Orthonormal DCT-II basis: row u holds alpha(u) cos((2x+1) u pi / 16).
const Block& dct_basis() {
  static const Block basis = [] {
    Block b;
    for (int u = 0; u < 8; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) {
        b(u, x) = alpha * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return b;
  }();
  return basis;
}

// Quantizes one plane of samples in the 0..255 domain in place.
void roundtrip_plane(std::vector<double>& plane, std::size_t H, std::size_t W,
                     const QuantTable& table) {
  const std::size_t Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;
  const Block& C = dct_basis();
  Block block, coeff;
  for (std::size_t by = 0; by < Hp; by += 8) {
    for (std::size_t bx = 0; bx < Wp; bx += 8) {
      for (std::size_t y = 0; y < 8; ++y) {
        const std::size_t sy = std::min(by + y, H - 1);
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t sx = std::min(bx + x, W - 1);
          block(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) =
              plane[sy * W + sx] - 128.0;
        }
      }
      coeff.noalias() = C * block * C.transpose();
      for (int i = 0; i < 64; ++i) {
        const double q = table.entries[static_cast<std::size_t>(i)];
        coeff.data()[i] = std::round(coeff.data()[i] / q) * q;
      }
      block.noalias() = C.transpose() * coeff * C;
      for (std::size_t y = 0; y < 8 && by + y < H; ++y) {
        for (std::size_t x = 0; x < 8 && bx + x < W; ++x) {
          plane[(by + y) * W + bx + x] =
              block(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) + 128.0;
        }
      }
    }
  }
}

}  // namespace

QuantTable luminance_table(int quality) { return scaled(kLuminanceBase, quality); }
QuantTable chrominance_table(int quality) { return scaled(kChrominanceBase, quality); }

Tensor jpeg_roundtrip(const Tensor& image, int quality) {
  require_quality(quality);
  if (image.rank() != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "jpeg_roundtrip expects C x H x W, got " + shape_string(image.shape()));
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2), P = H * W;
  const QuantTable lum = luminance_table(quality);
  const QuantTable chroma = chrominance_table(quality);

  std::vector<std::vector<double>> planes(C, std::vector<double>(P));
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < P; ++i) planes[c][i] = 255.0 * image[c * P + i];
  }

  if (C == 3) {
    for (std::size_t i = 0; i < P; ++i) {
      const double r = planes[0][i], g = planes[1][i], b = planes[2][i];
      planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
      planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
      planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }
    roundtrip_plane(planes[0], H, W, lum);
    roundtrip_plane(planes[1], H, W, chroma);
    roundtrip_plane(planes[2], H, W, chroma);
    for (std::size_t i = 0; i < P; ++i) {
      const double y = planes[0][i], cb = planes[1][i] - 128.0, cr = planes[2][i] - 128.0;
      planes[0][i] = y + 1.402 * cr;
      planes[1][i] = y - 0.344136 * cb - 0.714136 * cr;
      planes[2][i] = y + 1.772 * cb;
    }
  } else {
    for (auto& plane : planes) roundtrip_plane(plane, H, W, lum);
  }

  Tensor out = Tensor::zeros(image.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < P; ++i) {
      out[c * P + i] = static_cast<float>(std::clamp(planes[c][i] / 255.0, 0.0, 1.0));
    }
  }
  return out;
}

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "psnr");
  const double mse =
      (a.vec().cast<double>() - b.vec().cast<double>()).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace advbench
