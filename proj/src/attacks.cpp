#include "advbench/attacks.hpp"

#include <cmath>
#include <limits>

#include "advbench/rng.hpp"

namespace advbench {

std::string to_string(AttackMethod method) {
  switch (method) {
    case AttackMethod::kFgsm: return "fgsm";
    case AttackMethod::kBim: return "bim";
    case AttackMethod::kPgd: return "pgd";
    case AttackMethod::kDeepFool: return "deepfool";
  }
  return "unknown";
}

AttackMethod parse_attack_method(const std::string& name) {
  if (name == "fgsm") return AttackMethod::kFgsm;
  if (name == "bim") return AttackMethod::kBim;
  if (name == "pgd") return AttackMethod::kPgd;
  if (name == "deepfool") return AttackMethod::kDeepFool;
  throw Error(ErrorCode::kInvalidArgument, "unknown attack method '" + name + "'");
}

void AttackSpec::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(epsilon > 0.0f && epsilon <= 1.0f)) bad("epsilon must lie in (0, 1]");
  if (!(alpha > 0.0f) || !std::isfinite(alpha)) bad("alpha must be > 0");
  if (iterations < 1) bad("iterations must be >= 1");
  if (!(overshoot >= 0.0f) || !std::isfinite(overshoot)) bad("overshoot must be >= 0");
}

std::vector<std::string> AttackSpec::warnings() const {
  std::vector<std::string> out;
  const bool multi_step = method == AttackMethod::kBim || method == AttackMethod::kPgd;
  if (multi_step && alpha > epsilon) {
    out.push_back("alpha " + std::to_string(alpha) + " exceeds epsilon " +
                  std::to_string(epsilon) + "; every step will be clipped");
  }
  return out;
}

AttackSpec AttackSpec::preset(AttackMethod method, float epsilon, std::uint64_t seed) {
  AttackSpec s;
  s.method = method;
  s.epsilon = epsilon;
  s.alpha = epsilon / 4.0f;
  s.iterations = method == AttackMethod::kDeepFool ? 50 : 10;
  s.random_start = false;
  s.overshoot = 0.02f;
  s.seed = seed;
  return s;
}

Tensor project_linf_box(const Tensor& z, const Tensor& x, float eps) {
  require_same_shape(z, x, "project_linf_box");
  const auto lo = (x.vec().array() - eps).max(0.0f);
  const auto hi = (x.vec().array() + eps).min(1.0f);
  return Tensor::adopt(z.shape(), z.vec().array().max(lo).min(hi).matrix());
}

int predict_one(const Network& net, const Tensor& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return predict(net, x.reshaped(std::move(s)))[0];
}

namespace {

template <typename Scalar>
void require_pixels(const BasicTensor<Scalar>& x) {
  if (!x.all_finite()) throw Error(ErrorCode::kNonFinite, "attack input is not finite");
  if (x.vec().minCoeff() < Scalar(0) || x.vec().maxCoeff() > Scalar(1)) {
    throw Error(ErrorCode::kInvalidArgument, "attack input pixels must lie in [0, 1]");
  }
}

void require_eps(float eps) {
  if (!(eps >= 0.0f) || !std::isfinite(eps)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be finite and >= 0");
  }
}

AttackResult finish(const Network& net, Tensor adv, const Tensor& x, int label,
                    std::size_t iterations) {
  AttackResult r;
  r.perturbation_linf = linf_distance(adv, x);
  r.iterations_used = iterations;
  r.success = predict_one(net, adv) != label;
  r.adversarial = std::move(adv);
  return r;
}

auto loss_gradient(const Network& net, int label) {
  return [&net, label](const Tensor& z) { return loss_and_input_grad(net, z, label).grad; };
}

}  // namespace

AttackResult fgsm(const Network& net, const Tensor& x, int label, float eps) {
  require_pixels(x);
  require_eps(eps);
  const Tensor g = loss_and_input_grad(net, x, label).grad;
  if (!g.all_finite()) throw Error(ErrorCode::kNonFinite, "FGSM gradient is not finite");
  Tensor adv = Tensor::adopt(x.shape(), x.vec() + eps * sign(g).vec());
  adv = project_linf_box(adv, x, eps);
  return finish(net, std::move(adv), x, label, 1);
}

AttackResult bim(const Network& net, const Tensor& x, int label, float eps, float alpha,
                 std::size_t iterations) {
  require_pixels(x);
  require_eps(eps);
  if (iterations < 1) throw Error(ErrorCode::kInvalidArgument, "BIM needs >= 1 iteration");
  Tensor adv = projected_sign_ascent(x, x, loss_gradient(net, label), eps, alpha, iterations);
  return finish(net, std::move(adv), x, label, iterations);
}

AttackResult pgd(const Network& net, const Tensor& x, int label, float eps, float alpha,
                 std::size_t iterations, bool random_start, std::uint64_t seed) {
  require_pixels(x);
  require_eps(eps);
  if (iterations < 1) throw Error(ErrorCode::kInvalidArgument, "PGD needs >= 1 iteration");
  Tensor start = x;
  if (random_start) {
    CounterRng rng(seed, 0x706764ULL);
    for (auto& v : start.values()) v = std::clamp(v + rng.uniform(-eps, eps), 0.0f, 1.0f);
    start = project_linf_box(start, x, eps);
  }
  Tensor adv = projected_sign_ascent(x, std::move(start), loss_gradient(net, label), eps, alpha,
                                     iterations);
  return finish(net, std::move(adv), x, label, iterations);
}

template <typename Scalar>
BasicDeepFoolResult<Scalar> deepfool(const BasicNetwork<Scalar>& net, const BasicTensor<Scalar>& x,
                                     int label, std::size_t max_iter, Scalar overshoot) {
  using TensorT = BasicTensor<Scalar>;
  using VectorT = typename TensorT::Vector;
  require_pixels(x);
  if (label < 0 || static_cast<std::size_t>(label) >= net.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "deepfool: label out of range");
  }
  const std::size_t K = net.num_classes();
  const Scalar scale_out = Scalar(1) + overshoot;
  Shape batch_shape{1};
  batch_shape.insert(batch_shape.end(), x.shape().begin(), x.shape().end());

  VectorT total = VectorT::Zero(static_cast<Eigen::Index>(x.size()));
  TensorT current = x;
  std::size_t iter = 0;
  typename BasicNetwork<Scalar>::Tape tape;
  for (; iter < max_iter; ++iter) {
    const TensorT logits = net.forward(current.reshaped(batch_shape), &tape);
    if (argmax_rows(logits)[0] != label) break;

    // Gradient of every logit with respect to the input.
    std::vector<VectorT> grads(K);
    TensorT seed = TensorT::zeros(logits.shape());
    for (std::size_t k = 0; k < K; ++k) {
      seed.vec().setZero();
      seed[k] = Scalar(1);
      grads[k] = net.backward(tape, seed, nullptr, true)->vec();
    }

    const auto c = static_cast<std::size_t>(label);
    double best_dist = std::numeric_limits<double>::infinity();
    std::size_t best_k = K;
    double best_norm_sq = 0, best_gap = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (k == c) continue;
      const double norm_sq = (grads[k] - grads[c]).template cast<double>().squaredNorm();
      if (std::sqrt(norm_sq) < 1e-12) continue;
      const double gap = static_cast<double>(logits[k]) - static_cast<double>(logits[c]);
      const double dist = std::abs(gap) / std::sqrt(norm_sq);
      if (dist < best_dist) {
        best_dist = dist;
        best_k = k;
        best_norm_sq = norm_sq;
        best_gap = gap;
      }
    }
    if (best_k == K) {
      throw Error(ErrorCode::kDegenerateGradient,
                  "deepfool: all class-difference gradients vanish at iteration " +
                      std::to_string(iter));
    }
    const VectorT w = grads[best_k] - grads[c];
    total += static_cast<Scalar>(std::abs(best_gap) / best_norm_sq) * w;
    current = TensorT(x.shape(), VectorT(x.vec() + scale_out * total));
  }

  BasicDeepFoolResult<Scalar> r;
  r.perturbed = TensorT(x.shape(), VectorT(x.vec() + scale_out * total));
  r.perturbation = TensorT(x.shape(), VectorT(scale_out * total));
  r.iterations_used = iter;
  return r;
}

template DeepFoolResult deepfool(const Network&, const Tensor&, int, std::size_t, float);
template BasicDeepFoolResult<double> deepfool(const BasicNetwork<double>&, const BasicTensor<double>&,
                                              int, std::size_t, double);

AttackResult project_to_budget(const Network& net, const DeepFoolResult& raw, const Tensor& x,
                               int label, float eps) {
  require_eps(eps);
  Tensor adv = project_linf_box(raw.perturbed, x, eps);
  return finish(net, std::move(adv), x, label, raw.iterations_used);
}

AttackResult run_attack(const Network& net, const AttackSpec& spec, const Tensor& x, int label) {
  spec.validate();
  switch (spec.method) {
    case AttackMethod::kFgsm:
      return fgsm(net, x, label, spec.epsilon);
    case AttackMethod::kBim:
      return bim(net, x, label, spec.epsilon, spec.alpha, spec.iterations);
    case AttackMethod::kPgd:
      return pgd(net, x, label, spec.epsilon, spec.alpha, spec.iterations, spec.random_start,
                 spec.seed);
    case AttackMethod::kDeepFool: {
      const DeepFoolResult raw = deepfool(net, x, label, spec.iterations, spec.overshoot);
      return project_to_budget(net, raw, x, label, spec.epsilon);
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown attack method");
}

}  // namespace advbench
