#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advbench/nn.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

enum class AttackMethod { kFgsm, kBim, kPgd, kDeepFool };

std::string to_string(AttackMethod method);
AttackMethod parse_attack_method(const std::string& name);

struct AttackSpec {
  AttackMethod method = AttackMethod::kFgsm;
  float epsilon = 8.0f / 255.0f;  // L-infinity budget
  float alpha = 2.0f / 255.0f;    // per-step size (BIM, PGD)
  std::size_t iterations = 10;    // BIM/PGD steps, DeepFool cap
  bool random_start = false;      // PGD only
  float overshoot = 0.02f;        // DeepFool
  std::uint64_t seed = 0;

  void validate() const;
  // Non-fatal oddities, e.g. a step larger than the budget.
  std::vector<std::string> warnings() const;

  // Reproduction preset: alpha = eps/4 and 10 steps for BIM/PGD; DeepFool
  // with overshoot 0.02 and at most 50 iterations.
  static AttackSpec preset(AttackMethod method, float epsilon, std::uint64_t seed = 0);
};

struct AttackResult {
  Tensor adversarial;  // same shape as the input, entries in [0, 1]
  float perturbation_linf = 0;
  std::size_t iterations_used = 0;
  bool success = false;  // model misclassifies the adversarial input
};

// Entrywise projection onto {z : |z - x| <= eps} intersected with [0, 1].
Tensor project_linf_box(const Tensor& z, const Tensor& x, float eps);

// Iterated signed-gradient ascent with projection after every step:
// z_{k+1} = P(z_k + alpha * sign(grad(z_k))). `grad` maps a point to the
// loss gradient there. Shared by BIM and PGD and usable with any
// differentiable surrogate.
template <class GradFn>
Tensor projected_sign_ascent(const Tensor& x, Tensor start, GradFn&& grad, float eps, float alpha,
                             std::size_t iterations) {
  Tensor z = std::move(start);
  for (std::size_t k = 0; k < iterations; ++k) {
    const Tensor g = grad(z);
    if (!g.all_finite()) throw Error(ErrorCode::kNonFinite, "attack gradient is not finite");
    Tensor stepped = Tensor::adopt(z.shape(), z.vec() + alpha * sign(g).vec());
    z = project_linf_box(stepped, x, eps);
  }
  return z;
}

AttackResult fgsm(const Network& net, const Tensor& x, int label, float eps);
AttackResult bim(const Network& net, const Tensor& x, int label, float eps, float alpha,
                 std::size_t iterations);
AttackResult pgd(const Network& net, const Tensor& x, int label, float eps, float alpha,
                 std::size_t iterations, bool random_start, std::uint64_t seed);

// Unconstrained DeepFool output: x + (1 + overshoot) * accumulated step.
template <typename Scalar>
struct BasicDeepFoolResult {
  BasicTensor<Scalar> perturbed;
  BasicTensor<Scalar> perturbation;  // perturbed - x
  std::size_t iterations_used = 0;
};

using DeepFoolResult = BasicDeepFoolResult<float>;

// Multiclass DeepFool from the true label. Returns x untouched with zero
// iterations when x is already misclassified. Throws kDegenerateGradient
// when every class-difference gradient vanishes.
template <typename Scalar>
BasicDeepFoolResult<Scalar> deepfool(const BasicNetwork<Scalar>& net, const BasicTensor<Scalar>& x,
                                     int label, std::size_t max_iter = 50,
                                     Scalar overshoot = Scalar(0.02));

extern template DeepFoolResult deepfool(const Network&, const Tensor&, int, std::size_t, float);
extern template BasicDeepFoolResult<double> deepfool(const BasicNetwork<double>&,
                                                     const BasicTensor<double>&, int, std::size_t,
                                                     double);

// Clamps a DeepFool output into the eps-box around x and into [0, 1].
AttackResult project_to_budget(const Network& net, const DeepFoolResult& raw, const Tensor& x,
                               int label, float eps);

// Dispatch on spec.method. For DeepFool the unconstrained result is
// projected onto the budget.
AttackResult run_attack(const Network& net, const AttackSpec& spec, const Tensor& x, int label);

// Predicted class of one sample.
int predict_one(const Network& net, const Tensor& x);

}  // namespace advbench
