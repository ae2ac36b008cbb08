#include <algorithm>
#include <cmath>

#include "advbench/defenses.hpp"
#include "advbench/rng.hpp"

namespace advbench {

namespace {

struct Planes {
  std::size_t C, H, W;
};

Planes planes_of(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + " expects C x H x W, got " + shape_string(t.shape()));
  }
  return {t.dim(0), t.dim(1), t.dim(2)};
}

// Dual variable of the anisotropic TV term: one vertical and one horizontal
// forward difference per pixel (the last row/column entries stay zero).
struct Dual {
  std::vector<double> v, h;
};

void apply_gradient(const std::vector<double>& z, Planes g, Dual& out) {
  for (std::size_t c = 0; c < g.C; ++c) {
    const std::size_t base = c * g.H * g.W;
    for (std::size_t i = 0; i < g.H; ++i) {
      for (std::size_t j = 0; j < g.W; ++j) {
        const std::size_t p = base + i * g.W + j;
        out.v[p] = i + 1 < g.H ? z[p + g.W] - z[p] : 0.0;
        out.h[p] = j + 1 < g.W ? z[p + 1] - z[p] : 0.0;
      }
    }
  }
}

// Adjoint of apply_gradient (negative divergence).
void apply_gradient_adjoint(const Dual& d, Planes g, std::vector<double>& out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t c = 0; c < g.C; ++c) {
    const std::size_t base = c * g.H * g.W;
    for (std::size_t i = 0; i < g.H; ++i) {
      for (std::size_t j = 0; j < g.W; ++j) {
        const std::size_t p = base + i * g.W + j;
        if (i + 1 < g.H) {
          out[p] -= d.v[p];
          out[p + g.W] += d.v[p];
        }
        if (j + 1 < g.W) {
          out[p] -= d.h[p];
          out[p + 1] += d.h[p];
        }
      }
    }
  }
}

double tv_of(const std::vector<double>& z, Planes g) {
  double tv = 0;
  for (std::size_t c = 0; c < g.C; ++c) {
    const std::size_t base = c * g.H * g.W;
    for (std::size_t i = 0; i < g.H; ++i) {
      for (std::size_t j = 0; j < g.W; ++j) {
        const std::size_t p = base + i * g.W + j;
        if (i + 1 < g.H) tv += std::abs(z[p + g.W] - z[p]);
        if (j + 1 < g.W) tv += std::abs(z[p + 1] - z[p]);
      }
    }
  }
  return tv;
}

double objective(const std::vector<double>& z, const std::vector<double>& x,
                 const std::vector<double>& mask, double lambda, Planes g) {
  double fid = 0;
  for (std::size_t i = 0; i < z.size(); ++i) fid += mask[i] * (z[i] - x[i]) * (z[i] - x[i]);
  return 0.5 * fid + lambda * tv_of(z, g);
}

struct SolveOutput {
  Tensor best;
  std::vector<double> trace;
};

// Chambolle-Pock primal-dual iterations (theta = 1, fixed steps) for
//   min_z 0.5 * sum(m (z - x)^2) + indicator_[0,1](z) + lambda * |Dz|_1.
SolveOutput solve(const Tensor& image, float lambda, std::size_t iterations, float step,
                  float dropout_rate, std::uint64_t seed, bool keep_trace) {
  const Planes g = planes_of(image, "tvm_denoise");
  if (!image.all_finite()) throw Error(ErrorCode::kNonFinite, "tvm_denoise input is not finite");
  if (!(lambda > 0.0f) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::kInvalidArgument, "TVM lambda must be finite and > 0");
  }
  if (!(step > 0.0f) || !std::isfinite(step)) {
    throw Error(ErrorCode::kInvalidArgument, "TVM step must be finite and > 0");
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw Error(ErrorCode::kInvalidArgument, "TVM dropout_rate must lie in [0, 1)");
  }
  const std::size_t n = image.size();
  std::vector<double> x(n), mask(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) x[i] = image[i];
  if (dropout_rate > 0.0f) {
    const Tensor m = dropout_mask(image.shape(), dropout_rate, seed);
    for (std::size_t i = 0; i < n; ++i) mask[i] = m[i];
  }

  std::vector<double> z(n), z_prev(n), z_bar(n), adj(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = std::clamp(x[i], 0.0, 1.0);
  z_bar = z;
  Dual p{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  Dual dz = p;

  constexpr double kOpNormSq = 8.0;  // |D|^2 bound for 2-D forward differences
  const double tau = step;
  const double sigma = 0.99 / (kOpNormSq * tau);

  SolveOutput out;
  double best_obj = objective(z, x, mask, lambda, g);
  std::vector<double> best = z;
  if (keep_trace) out.trace.push_back(best_obj);

  for (std::size_t it = 0; it < iterations; ++it) {
    apply_gradient(z_bar, g, dz);
    for (std::size_t i = 0; i < n; ++i) {
      p.v[i] = std::clamp(p.v[i] + sigma * dz.v[i], -static_cast<double>(lambda),
                          static_cast<double>(lambda));
      p.h[i] = std::clamp(p.h[i] + sigma * dz.h[i], -static_cast<double>(lambda),
                          static_cast<double>(lambda));
    }
    apply_gradient_adjoint(p, g, adj);
    z_prev = z;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = z[i] - tau * adj[i];
      z[i] = std::clamp((v + tau * mask[i] * x[i]) / (1.0 + tau * mask[i]), 0.0, 1.0);
    }
    for (std::size_t i = 0; i < n; ++i) z_bar[i] = 2.0 * z[i] - z_prev[i];

    const double obj = objective(z, x, mask, lambda, g);
    if (!std::isfinite(obj)) {
      throw Error(ErrorCode::kNonFinite,
                  "TVM objective became non-finite at iteration " + std::to_string(it + 1));
    }
    if (obj < best_obj) {
      best_obj = obj;
      best = z;
    }
    if (keep_trace) out.trace.push_back(best_obj);
  }

  out.best = Tensor::zeros(image.shape());
  for (std::size_t i = 0; i < n; ++i) out.best[i] = static_cast<float>(best[i]);
  return out;
}

}  // namespace

double total_variation(const Tensor& image) {
  const Planes g = planes_of(image, "total_variation");
  std::vector<double> z(image.values().begin(), image.values().end());
  return tv_of(z, g);
}

double tv_objective(const Tensor& z, const Tensor& x, const Tensor* mask, double lambda) {
  require_same_shape(z, x, "tv_objective");
  const Planes g = planes_of(z, "tv_objective");
  std::vector<double> zz(z.values().begin(), z.values().end());
  std::vector<double> xx(x.values().begin(), x.values().end());
  std::vector<double> m(z.size(), 1.0);
  if (mask) {
    require_same_shape(z, *mask, "tv_objective mask");
    m.assign(mask->values().begin(), mask->values().end());
  }
  return objective(zz, xx, m, lambda, g);
}

Tensor dropout_mask(const Shape& shape, float dropout_rate, std::uint64_t seed) {
  Tensor m = Tensor::zeros(shape);
  CounterRng rng(seed, 0x6d61736bULL);
  for (auto& v : m.values()) v = rng.bernoulli(1.0f - dropout_rate) ? 1.0f : 0.0f;
  return m;
}

Tensor tvm_denoise(const Tensor& image, float lambda, std::size_t iterations, float step,
                   float dropout_rate, std::uint64_t seed) {
  return solve(image, lambda, iterations, step, dropout_rate, seed, false).best;
}

std::vector<double> tvm_best_objective_trace(const Tensor& image, float lambda,
                                             std::size_t iterations, float step,
                                             float dropout_rate, std::uint64_t seed) {
  return solve(image, lambda, iterations, step, dropout_rate, seed, true).trace;
}

}  // namespace advbench
