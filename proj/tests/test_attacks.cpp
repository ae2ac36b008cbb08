#include <cmath>
#include <limits>

#include "advbench/attacks.hpp"
#include "advbench/rng.hpp"
#include "doctest.h"

using namespace advbench;

namespace {

Tensor random_image(Shape shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  CounterRng rng(seed, 5);
  for (auto& v : t.values()) v = rng.uniform01();
  return t;
}

// Logits W x + b over a flattened 1 x 1 x D input.
Network affine_net(const Eigen::MatrixXd& W, const Eigen::VectorXd& b) {
  const auto K = static_cast<std::size_t>(W.rows()), D = static_cast<std::size_t>(W.cols());
  Network::ParamSet p(2);
  Tensor w = Tensor::zeros({K, D});
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) w[k * D + d] = static_cast<float>(W(k, d));
  }
  Tensor bias = Tensor::zeros({K});
  for (std::size_t k = 0; k < K; ++k) bias[k] = static_cast<float>(b(k));
  p[1] = {w, bias};
  return Network({Flatten{}, Dense{K}}, std::move(p));
}

Network small_cnn(std::uint64_t seed) {
  return Network::initialized({Conv2D{4, 3, 1, 1}, ReLU{}, MaxPool2D{2}, Flatten{}, Dense{16}, ReLU{}, Dense{5}},
                              {1, 8, 8}, seed);
}

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("fgsm with zero budget returns the input") {
  const Network net = small_cnn(1);
  const Tensor x = random_image({1, 8, 8}, 2);
  CHECK(fgsm(net, x, 0, 0.0f).adversarial == x);
}

TEST_CASE("fgsm perturbs each pixel by eps times the gradient sign") {
  // Two classes, label 0: grad_x CE = p1 (w1 - w0), so its sign is sign(w1 - w0).
  Eigen::MatrixXd W(2, 3);
  W << 0.0, 0.0, 0.0, 0.3, -0.2, 0.0;
  const Network net = affine_net(W, Eigen::VectorXd::Zero(2));
  const Tensor x({1, 1, 3}, {0.5f, 0.5f, 0.5f});
  const auto r = fgsm(net, x, 0, 0.1f);
  const Tensor delta = sub(r.adversarial, x);
  CHECK(delta[0] == doctest::Approx(0.1f));
  CHECK(delta[1] == doctest::Approx(-0.1f));
  CHECK(delta[2] == 0.0f);
  CHECK(r.perturbation_linf == doctest::Approx(0.1f));
  CHECK(r.iterations_used == 1);
}

TEST_CASE("one-step degeneracy: pgd == bim == fgsm") {
  const Network net = small_cnn(3);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = random_image({1, 8, 8}, 10 + s);
    const float eps = 8.0f / 255.0f;
    const Tensor a = fgsm(net, x, 1, eps).adversarial;
    const Tensor b = bim(net, x, 1, eps, eps, 1).adversarial;
    const Tensor c = pgd(net, x, 1, eps, eps, 1, false, 0).adversarial;
    CHECK(linf_distance(a, b) <= 1e-6f);
    CHECK(linf_distance(a, c) <= 1e-6f);
  }
}

TEST_CASE("every BIM iterate stays in the budget") {
  const Network net = small_cnn(4);
  const Tensor x = random_image({1, 8, 8}, 4);
  const float eps = 4.0f / 255.0f;
  std::vector<Tensor> iterates;
  auto grad = [&](const Tensor& z) {
    iterates.push_back(z);
    return loss_and_input_grad(net, z, 2).grad;
  };
  const Tensor last = projected_sign_ascent(x, x, grad, eps, eps / 4, 10);
  iterates.push_back(last);
  CHECK(iterates.size() == 11);
  for (const auto& z : iterates) {
    CHECK(linf_distance(z, x) <= eps + 1e-6f);
    CHECK(z.vec().minCoeff() >= 0.0f);
    CHECK(z.vec().maxCoeff() <= 1.0f);
  }
}

TEST_CASE("sign ascent on a separable quadratic reaches the best of the 27-point lattice") {
  // J(z) = sum_i w_i (z_i - c_i)^2
  const Eigen::Vector3d w(1.0, 2.0, -1.0), c(0.47, 0.56, 0.5);
  const Tensor x({3}, {0.5f, 0.5f, 0.5f});
  const float eps = 0.1f;
  auto J = [&](const Tensor& z) {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += w[i] * (z[i] - c[i]) * (z[i] - c[i]);
    return s;
  };
  auto grad = [&](const Tensor& z) {
    Tensor g = Tensor::zeros({3});
    for (int i = 0; i < 3; ++i) g[i] = static_cast<float>(2 * w[i] * (z[i] - c[i]));
    return g;
  };
  const Tensor z = projected_sign_ascent(x, x, grad, eps, eps / 4, 10);

  double best = -std::numeric_limits<double>::infinity();
  Tensor arg = x;
  for (int a = -1; a <= 1; ++a) {
    for (int b = -1; b <= 1; ++b) {
      for (int d = -1; d <= 1; ++d) {
        const Tensor p({3}, {0.5f + a * eps, 0.5f + b * eps, 0.5f + d * eps});
        if (J(p) > best) {
          best = J(p);
          arg = p;
        }
      }
    }
  }
  CHECK(linf_distance(z, arg) <= 1e-6f);
  CHECK(J(z) == doctest::Approx(best));
}

TEST_CASE("pgd random start is seeded") {
  const Network net = small_cnn(5);
  const Tensor x = random_image({1, 8, 8}, 6);
  const float eps = 8.0f / 255.0f;
  const auto a = pgd(net, x, 0, eps, eps / 4, 10, true, 42).adversarial;
  const auto b = pgd(net, x, 0, eps, eps / 4, 10, true, 42).adversarial;
  const auto c = pgd(net, x, 0, eps, eps / 4, 1, true, 43).adversarial;
  CHECK(a == b);
  CHECK(!(pgd(net, x, 0, eps, eps / 4, 1, true, 42).adversarial == c));
}

TEST_CASE("all attacks respect the budget and the pixel range") {
  const Network net = small_cnn(6);
  for (auto method : {AttackMethod::kFgsm, AttackMethod::kBim, AttackMethod::kPgd, AttackMethod::kDeepFool}) {
    for (float eps : {2.0f / 255, 16.0f / 255, 0.5f}) {
      AttackSpec spec = AttackSpec::preset(method, eps, 7);
      spec.random_start = true;
      for (std::uint64_t s = 0; s < 5; ++s) {
        const Tensor x = random_image({1, 8, 8}, 100 + s);
        const auto r = run_attack(net, spec, x, static_cast<int>(s % 5));
        CHECK(r.perturbation_linf <= eps + 1e-6f);
        CHECK(linf_distance(r.adversarial, x) <= eps + 1e-6f);
        CHECK(r.adversarial.vec().minCoeff() >= 0.0f);
        CHECK(r.adversarial.vec().maxCoeff() <= 1.0f);
      }
    }
  }
}

TEST_CASE("attack spec validation and warnings") {
  AttackSpec s = AttackSpec::preset(AttackMethod::kBim, 8.0f / 255);
  CHECK(s.alpha == doctest::Approx(2.0f / 255));
  CHECK(s.iterations == 10);
  CHECK(s.warnings().empty());
  s.alpha = 0.5f;
  CHECK(s.warnings().size() == 1);
  s.epsilon = 0.0f;
  CHECK_THROWS_AS(s.validate(), Error);
  CHECK(AttackSpec::preset(AttackMethod::kDeepFool, 0.1f).iterations == 50);
  CHECK_THROWS_AS(parse_attack_method("cw"), Error);
  CHECK_THROWS_AS(fgsm(small_cnn(1), Tensor({1, 8, 8}, 1.5f), 0, 0.1f), Error);
}

TEST_CASE("deepfool reproduces the binary affine closed form") {
  CounterRng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index D = 6;
    Eigen::VectorXd w(D);
    for (Eigen::Index i = 0; i < D; ++i) w(i) = rng.uniform(-1, 1);
    const double b = rng.uniform(-0.5f, 0.5f);
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(2, D);
    W.row(1) = w.transpose();
    Eigen::VectorXd bias(2);
    bias << 0.0, b;
    const Network net = affine_net(W, bias);
    const Tensor x = random_image({1, 1, static_cast<std::size_t>(D)}, 200 + trial);
    const Eigen::VectorXd xd = x.vec().cast<double>();
    const double f = w.dot(xd) + b;
    const int label = f > 0 ? 1 : 0;
    const auto r = deepfool(net, x, label, 50, 0.0f);
    const Eigen::VectorXd expected = -(f / w.squaredNorm()) * w;
    const Eigen::VectorXd got = r.perturbation.vec().cast<double>();
    CHECK((got - expected).norm() <= 1e-4 * expected.norm());
  }
}

TEST_CASE("deepfool leaves misclassified inputs alone") {
  Eigen::MatrixXd W(2, 2);
  W << 1, 0, 0, 0;
  const Network net = affine_net(W, Eigen::VectorXd::Zero(2));
  const Tensor x({1, 1, 2}, {0.8f, 0.2f});
  REQUIRE(predict_one(net, x) == 0);
  const auto r = deepfool(net, x, 1);
  CHECK(r.iterations_used == 0);
  CHECK(r.perturbed == x);
  CHECK(project_to_budget(net, r, x, 1, 0.1f).adversarial == x);
}

TEST_CASE("deepfool on 3-class affine classifiers matches a grid search in the plane") {
  CounterRng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd W(3, 2);
    for (int i = 0; i < 6; ++i) W.data()[i] = rng.uniform(-2, 2);
    Eigen::VectorXd b(3);
    for (int i = 0; i < 3; ++i) b(i) = rng.uniform(-0.3f, 0.3f);
    const Network net = affine_net(W, b);
    const Tensor x({1, 1, 2}, {rng.uniform(0.3f, 0.7f), rng.uniform(0.3f, 0.7f)});
    const int c = predict_one(net, x);
    const auto r = deepfool(net, x, c, 50, 0.0f);
    const double df_norm = r.perturbation.vec().cast<double>().norm();

    double closed = std::numeric_limits<double>::infinity();
    const Eigen::Vector2d xd = x.vec().cast<double>();
    for (int k = 0; k < 3; ++k) {
      if (k == c) continue;
      const Eigen::Vector2d wk = (W.row(k) - W.row(c)).transpose();
      closed = std::min(closed, std::abs(wk.dot(xd) + b(k) - b(c)) / wk.norm());
    }
    CHECK(std::abs(df_norm - closed) <= 1e-4 * closed);

    // Nearest grid point (step 1e-3) whose class differs from c.
    const double R = closed * 1.2 + 3e-3, h = 1e-3;
    const int n = static_cast<int>(std::ceil(R / h));
    double grid = std::numeric_limits<double>::infinity();
    for (int i = -n; i <= n; ++i) {
      for (int j = -n; j <= n; ++j) {
        const Eigen::Vector2d p = xd + Eigen::Vector2d(i * h, j * h);
        const Eigen::Vector3d z = W * p + b;
        Eigen::Index arg;
        z.maxCoeff(&arg);
        if (arg != c) grid = std::min(grid, (p - xd).norm());
      }
    }
    CHECK(std::abs(df_norm - grid) <= 2e-3);
  }
}

}
