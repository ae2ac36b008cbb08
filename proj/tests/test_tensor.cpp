#include <cmath>
#include <limits>

#include "advbench/container.hpp"
#include "advbench/rng.hpp"
#include "advbench/tensor.hpp"
#include "doctest.h"

using namespace advbench;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1, float hi = 1) {
  Tensor t = Tensor::zeros(std::move(shape));
  CounterRng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("construction validates shape and finiteness") {
  CHECK(Tensor({2, 3}).size() == 6);
  CHECK_THROWS_AS(Tensor(Shape{}), Error);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), Error);
  CHECK_THROWS_AS(Tensor({2}, {1.0f, 2.0f, 3.0f}), Error);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  try {
    Tensor({2}, {1.0f, nan});
    FAIL("NaN accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
  }
  CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<float>::infinity()}), Error);
}

TEST_CASE("elementwise examples") {
  CHECK(sign(Tensor({3}, {0.3f, -0.2f, 0.0f})) == Tensor({3}, {1.0f, -1.0f, 0.0f}));
  CHECK(clamp(Tensor({3}, {-0.1f, 0.5f, 1.2f}), 0.0f, 1.0f) == Tensor({3}, {0.0f, 0.5f, 1.0f}));
  CHECK(add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4})) == Tensor({2}, {4, 6}));
  CHECK(sub(Tensor({2}, {1, 2}), Tensor({2}, {3, 4})) == Tensor({2}, {-2, -2}));
  CHECK(mul(Tensor({2}, {1, 2}), Tensor({2}, {3, 4})) == Tensor({2}, {3, 8}));
  CHECK(scale(Tensor({2}, {1, -2}), 0.5f) == Tensor({2}, {0.5f, -1}));
  CHECK(abs(Tensor({2}, {1, -2})) == Tensor({2}, {1, 2}));
  CHECK(elementwise<float>(ElementwiseOp::kAdd, Tensor({2}, {1, 2}), Tensor({2}, {3, 4})) == Tensor({2}, {4, 6}));
}

TEST_CASE("shape mismatch is a structured error") {
  try {
    add(Tensor({2}), Tensor({3}));
    FAIL("mismatch accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
    CHECK(std::string(e.what()).find("[2]") != std::string::npos);
  }
}

TEST_CASE("tensor clamp uses per-entry bounds") {
  const Tensor x({3}, {0.5f, -1.0f, 2.0f});
  const Tensor lo({3}, {0.6f, 0.0f, 0.0f});
  const Tensor hi({3}, {1.0f, 1.0f, 1.5f});
  CHECK(clamp(x, lo, hi) == Tensor({3}, {0.6f, 0.0f, 1.5f}));
}

TEST_CASE("linf distance") {
  CHECK(linf_distance(Tensor({2}, {0, 0}), Tensor({2}, {0.1f, -0.3f})) == doctest::Approx(0.3f));
  const Tensor a = random_tensor({5, 7}, 3);
  CHECK(linf_distance(a, a) == 0.0f);
  const Tensor b = random_tensor({5, 7}, 4);
  float oracle = 0;
  for (std::size_t i = 0; i < a.size(); ++i) oracle = std::max(oracle, std::abs(a[i] - b[i]));
  CHECK(linf_distance(a, b) == oracle);
}

TEST_CASE("l2 norm") {
  CHECK(l2_norm(Tensor({2}, {3, 4})) == doctest::Approx(5.0f));
  CHECK(l2_norm(Tensor::zeros({4})) == 0.0f);
  const Tensor a = random_tensor({64}, 9);
  double ss = 0;
  for (float v : a.values()) ss += static_cast<double>(v) * v;
  CHECK(std::abs(l2_norm(a) - std::sqrt(ss)) <= 1e-6 * std::sqrt(ss));
}

TEST_CASE("stack and slice") {
  const Tensor a({2}, {1, 2}), b({2}, {3, 4});
  const std::vector<Tensor> items{a, b};
  const Tensor s = stack(std::span<const Tensor>(items));
  CHECK(s.shape() == Shape{2, 2});
  CHECK(slice_rows(s, 1, 1) == Tensor({1, 2}, {3, 4}));
  CHECK_THROWS_AS(slice_rows(s, 1, 2), Error);
}

TEST_CASE("counter rng is a pure function of seed, stream and position") {
  CounterRng a(5, 1), b(5, 1), c(5, 2);
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  CounterRng u(1);
  for (int i = 0; i < 1000; ++i) {
    const float v = u.uniform01();
    CHECK((v >= 0.0f && v < 1.0f));
  }
}

TEST_CASE("container reader reports offsets") {
  container::ByteWriter w;
  w.header(1);
  w.u32(7);
  auto bytes = w.take();
  container::ByteReader r(bytes);
  CHECK(r.header() == 1);
  CHECK(r.u32() == 7);
  CHECK(r.at_end());
  try {
    r.u8();
    FAIL("read past end");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
    CHECK(std::string(e.what()).find("offset 16") != std::string::npos);
  }
  bytes[0] = 'X';
  container::ByteReader bad(bytes);
  CHECK_THROWS_AS(bad.header(), Error);
}

}
