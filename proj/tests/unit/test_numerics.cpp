#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "malab/errors.hpp"
#include "malab/numerics/ops.hpp"
#include "malab/numerics/optim.hpp"
#include "malab/numerics/tensor.hpp"
#include "support/primitives.hpp"
#include "support/testing.hpp"

using namespace malab;
using malab::testing::random_tensor;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return Tensor({m, n}, c);
}

Tensor eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, v);
}

}  // namespace

TEST_CASE("tensor construction checks shape and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::infinity()}), NumericError);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK(numel({}) == 1);
}

TEST_CASE("overflow inside an op surfaces as a numeric error") {
  const Tensor big({1}, {1e200});
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("matmul examples") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  CHECK(bitwise_equal(matmul(a, eye(2)), a));
  const Tensor b({2, 2}, {5, 6, 7, 8});
  CHECK(bitwise_equal(matmul(a, b), Tensor({2, 2}, {19, 22, 43, 50})));
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul matches a naive triple loop across tile edges") {
  std::mt19937_64 rng(11);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {5, 7, 3}, {6, 16, 16}, {13, 9, 33}, {37, 64, 70}}) {
    const auto a = random_tensor({std::size_t(m), std::size_t(k)}, rng);
    const auto b = random_tensor({std::size_t(k), std::size_t(n)}, rng);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("matmul associates with identity and distributes over addition") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = random_tensor({8, 8}, rng), b = random_tensor({8, 8}, rng), c = random_tensor({8, 8}, rng);
    CHECK(max_abs_diff(matmul(matmul(a, eye(8)), b), matmul(a, matmul(eye(8), b))) < 1e-10);
    CHECK(max_abs_diff(matmul(a, add(b, c)), add(matmul(a, b), matmul(a, c))) < 1e-10);
  }
}

TEST_CASE("layer_norm examples") {
  const auto flat = layer_norm(Tensor({4}, {5, 5, 5, 5}));
  for (double v : flat.data()) CHECK(v == 0.0);
  const auto pair = layer_norm(Tensor({2}, {1, 3}), 0.0);
  CHECK(pair[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(pair[1] == doctest::Approx(1.0).epsilon(1e-15));
  std::mt19937_64 rng(5);
  const auto y = layer_norm(random_tensor({16}, rng, 3.0), 0.0);
  double mean = 0.0, var = 0.0;
  for (double v : y.data()) mean += v / 16.0;
  for (double v : y.data()) var += (v - mean) * (v - mean) / 16.0;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::abs(var - 1.0) < 1e-9);
  CHECK_THROWS(layer_norm(Tensor({1}, {1.0})));
}

TEST_CASE("softmax_rows examples and stability") {
  const auto half = softmax_rows(Tensor({2}, {0, 0}));
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);
  const auto q = softmax_rows(Tensor({2}, {0, std::log(3.0)}));
  CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(0.75).epsilon(1e-14));

  std::mt19937_64 rng(8);
  const auto x = random_tensor({4, 6}, rng);
  CHECK(max_abs_diff(softmax_rows(add_scalar(x, 7.0)), softmax_rows(x)) < 1e-12);

  const auto wide = random_tensor({5, 9}, rng, 1e4);
  const auto s = softmax_rows(wide);
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(s.at(r, c) >= 0.0);
      total += s.at(r, c);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("silu examples") {
  const auto y = silu(Tensor({3}, {0.0, 50.0, 1.0}));
  CHECK(y[0] == 0.0);
  CHECK(std::abs(y[1] - 50.0) < 1e-9);
  CHECK(y[2] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
  const auto neg = silu(Tensor({1}, {-40.0}));
  CHECK(neg[0] == doctest::Approx(-40.0 / (1.0 + std::exp(40.0))).epsilon(1e-12));
}

TEST_CASE("grad_of examples") {
  const auto x = Tensor::scalar(3.0, true);
  CHECK(grad_of(square(x), std::vector{x})[0].item() == 6.0);

  const auto w = Tensor::full({3}, 2.0, true);
  const auto constant = sum(Tensor::full({3}, 1.0));
  const auto g = grad_of(constant, std::vector{w});
  CHECK(g[0].shape() == Shape{3});
  for (double v : g[0].data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(grad_of(mul(w, w), std::vector{w}), ShapeError);

  std::mt19937_64 rng(17);
  const auto check = testing::gradcheck(
      [](const std::vector<Tensor>& in) { return sum(mul(layer_norm(in[0]), in[1])); },
      {random_tensor({3, 6}, rng), random_tensor({3, 6}, rng)});
  CHECK(check.relative_error <= 1e-6);
}

TEST_CASE("graph recording respects NoGradGuard") {
  const auto x = Tensor::full({2}, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(mul(x, x).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("every primitive passes central finite differences on 50 cases") {
  for (const auto& prim : testing::primitives()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto c = prim.make(seed);
      worst = std::max(worst, testing::gradcheck(c.loss, c.inputs).relative_error);
    }
    INFO(prim.name);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("adam moves a quadratic toward its minimum") {
  auto x = Tensor::full({2}, 5.0, true);
  AdamOptimizer opt({x}, {.learning_rate = 0.1});
  for (int i = 0; i < 500; ++i) {
    const auto loss = sum(square(x));
    opt.step(grad_of(loss, std::vector{x}));
  }
  CHECK(opt.steps_taken() == 500);
  CHECK(std::abs(x[0]) < 1e-2);
  CHECK(std::abs(x[1]) < 1e-2);
}
