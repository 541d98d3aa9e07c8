#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "malab/diffusion/gmm.hpp"
#include "malab/diffusion/sampler.hpp"
#include "malab/diffusion/schedule.hpp"
#include "malab/diffusion/training.hpp"
#include "malab/errors.hpp"
#include "malab/numerics/ops.hpp"
#include "malab/workbench/metrics.hpp"
#include "support/testing.hpp"

using namespace malab;
using namespace malab::diffusion;
using malab::testing::random_tensor;

namespace {

// E[x | z] by midpoint quadrature of p(x) N(z; x, t^2 I) on an n x n grid.
Point quadrature_posterior(const Point& z, double t, const GMMSpec& gmm, std::size_t n) {
  const double lo = -1.6, hi = 1.6, h = (hi - lo) / n;
  double w0 = 0.0, wx = 0.0, wy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lo + (i + 0.5) * h;
    for (std::size_t j = 0; j < n; ++j) {
      const double y = lo + (j + 0.5) * h;
      double prior = 0.0;
      for (std::size_t k = 0; k < gmm.components(); ++k) {
        const double dx = x - gmm.means[k][0], dy = y - gmm.means[k][1];
        prior += gmm.weights[k] * std::exp(-(dx * dx + dy * dy) / (2 * gmm.scale * gmm.scale));
      }
      const double ex = z[0] - x, ey = z[1] - y;
      const double weight = prior * std::exp(-(ex * ex + ey * ey) / (2 * t * t));
      w0 += weight;
      wx += weight * x;
      wy += weight * y;
    }
  }
  return {wx / w0, wy / w0};
}

}  // namespace

TEST_CASE("schedule") {
  NoiseSchedule s;
  CHECK(s.sigma(0.0) == 0.0);
  CHECK(s.sigma(1.25) == 1.25);
  CHECK(s.time(0) == s.sigma_max);
  CHECK(s.time(s.steps) == 0.0);
  for (std::size_t i = 0; i < s.steps; ++i) CHECK(s.time(i + 1) < s.time(i));
  CHECK_THROWS_AS(s.sigma(3.5), std::out_of_range);
  CHECK_THROWS_AS(s.sigma(-0.1), std::out_of_range);
  s.steps = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("forward_noise") {
  NoiseSchedule s;
  std::mt19937_64 rng(1);
  const auto x = random_tensor({4, 2}, rng), eps = random_tensor({4, 2}, rng);
  CHECK(bitwise_equal(forward_noise(x, 0.0, eps, s), x));
  CHECK(bitwise_equal(forward_noise(x, 2.0, Tensor::zeros({4, 2}), s), x));
  CHECK(bitwise_equal(forward_noise(Tensor::zeros({4, 2}), s.sigma_max, eps, s), scale(eps, s.sigma_max)));
  CHECK_THROWS_AS(forward_noise(x, 1.0, Tensor::zeros({2, 4}), s), ShapeError);
}

TEST_CASE("perfect denoising recovers x") {
  NoiseSchedule s;
  std::mt19937_64 rng(2);
  // Dyadic x and t keep x + t eps - t eps exact.
  for (double t : {0.5, 1.0, 2.0}) {
    std::vector<double> xs;
    for (int i = 0; i < 8; ++i) xs.push_back(std::ldexp(static_cast<double>(i) - 3.0, -2));
    const Tensor x({8}, xs);
    const auto eps = Tensor({8}, std::vector<double>{0.5, -0.25, 1.0, 0.125, -1.5, 0.75, 2.0, -0.625});
    const auto z = forward_noise(x, t, eps, s);
    CHECK(bitwise_equal(sub(z, scale(eps, s.sigma(t))), x));
  }
}

TEST_CASE("mixture validation") {
  auto g = default_mixture();
  CHECK(g.components() == 8);
  CHECK(g.scale == 0.05);
  CHECK_NOTHROW(g.validate());
  g.weights[0] += 1e-6;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = default_mixture();
  g.scale = -1.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("posterior mean examples") {
  GMMSpec single{{{0.3, -0.7}}, 0.0, {1.0}};
  for (double z0 : {-2.0, 0.0, 5.0}) {
    const auto p = gmm_posterior_mean({z0, 1.0}, 0.8, single);
    CHECK(p[0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-0.7).epsilon(1e-15));
  }
  GMMSpec pair{{{-1.0, 0.0}, {1.0, 0.0}}, 0.1, {0.5, 0.5}};
  const auto mid = gmm_posterior_mean({0.0, 0.0}, 0.7, pair);
  CHECK(std::abs(mid[0]) < 1e-15);
  CHECK(std::abs(mid[1]) < 1e-15);
  CHECK_THROWS(gmm_posterior_mean({0.0, 0.0}, 0.0, pair));
  CHECK_THROWS(gmm_posterior_mean({0.0, 0.0}, -1.0, pair));
}

TEST_CASE("posterior mean matches 400x400 quadrature") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uz(-1.8, 1.8), ut(0.25, 3.0);
  GMMSpec skewed{{{0.6, 0.2}, {-0.5, 0.5}, {0.0, -0.8}}, 0.12, {0.5, 0.3, 0.2}};
  for (const auto& gmm : {default_mixture(), skewed}) {
    for (int rep = 0; rep < 10; ++rep) {
      const Point z{uz(rng), uz(rng)};
      const double t = ut(rng);
      const auto exact = gmm_posterior_mean(z, t, gmm);
      const auto quad = quadrature_posterior(z, t, gmm, 400);
      CHECK(std::abs(exact[0] - quad[0]) < 1e-3);
      CHECK(std::abs(exact[1] - quad[1]) < 1e-3);
    }
  }
}

TEST_CASE("noise prediction is consistent with the posterior mean") {
  const auto gmm = default_mixture();
  const Point z{0.4, -1.1};
  const auto x = gmm_posterior_mean(z, 1.3, gmm);
  const auto e = gmm_noise_prediction(z, 1.3, gmm);
  CHECK(e[0] == doctest::Approx((z[0] - x[0]) / 1.3).epsilon(1e-14));
  CHECK(e[1] == doctest::Approx((z[1] - x[1]) / 1.3).epsilon(1e-14));
}

TEST_CASE("direct mixture draws") {
  std::mt19937_64 rng(4);
  const auto gmm = default_mixture();
  const auto x = sample_gmm(gmm, 4000, rng);
  CHECK(x.shape() == Shape{4000, 2});
  double mean_r = 0.0;
  for (std::size_t i = 0; i < 4000; ++i) mean_r += std::hypot(x.at(i, 0), x.at(i, 1)) / 4000;
  CHECK(mean_r == doctest::Approx(1.0).epsilon(0.01));

  ToyTask task;
  const auto batch = task.sample(10, rng);
  CHECK(batch.x.shape() == Shape{10, 16, 2});
  for (int c : batch.classes) CHECK((c >= 0 && c < task.null_class()));
  const auto one = task.sample_class(2, 5, rng);
  for (std::size_t i = 0; i < one.size(); i += 2) {
    CHECK(std::hypot(one[i] - gmm.means[2][0], one[i + 1] - gmm.means[2][1]) < 0.4);
  }
}

TEST_CASE("euler_sample with a zero denoiser returns the initial draw") {
  NoiseSchedule s{3.0, 17};
  const Denoiser zero = [](const Tensor& z, double, int) { return Tensor::zeros(z.shape()); };
  const auto out = euler_sample(zero, s, 0, 99, 5);
  CHECK(bitwise_equal(out, initial_noise(s, 99, 5, {})));
}

TEST_CASE("euler_sample is deterministic and shape checked") {
  NoiseSchedule s{3.0, 20};
  ToyTask task;
  const auto d = gmm_denoiser(task);
  CHECK(bitwise_equal(euler_sample(d, s, 1, 7, 8), euler_sample(d, s, 1, 7, 8)));
  CHECK_FALSE(bitwise_equal(euler_sample(d, s, 1, 7, 8), euler_sample(d, s, 1, 8, 8)));
  const Denoiser bad = [](const Tensor&, double, int) { return Tensor::zeros({1}); };
  CHECK_THROWS_AS(euler_sample(bad, s, 0, 0, 2), ShapeError);
}

TEST_CASE("oracle sampling lands on the class component") {
  NoiseSchedule s{3.0, 100};
  ToyTask task;
  const auto samples = euler_sample(gmm_denoiser(task), s, 5, 1, 64);
  std::mt19937_64 rng(5);
  const auto ref = task.sample_class(5, 64, rng);
  CHECK(workbench::sliced_w2(samples, ref, 32, 0) < 0.05);
}

TEST_CASE("denoising loss examples") {
  std::mt19937_64 rng(6);
  const auto x = random_tensor({3, 4, 2}, rng), eps = random_tensor({3, 4, 2}, rng);
  const std::vector<double> t{0.5, 1.0, 2.0};
  const std::vector<int> c{0, 1, 2};
  // Recovers eps from z = x + t eps by knowing x.
  const Predictor perfect = [&](const Tensor& z, std::span<const double> ts, std::span<const int>) {
    std::vector<double> v(z.size());
    const std::size_t per = z.size() / ts.size();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (z[i] - x[i]) / ts[i / per];
    return Tensor(z.shape(), v);
  };
  CHECK(denoising_loss(perfect, x, t, c, eps).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-24));
  const Predictor null = [](const Tensor& z, std::span<const double>, std::span<const int>) { return Tensor::zeros(z.shape()); };
  double mean_sq = 0.0;
  for (double e : eps.data()) mean_sq += e * e / eps.size();
  CHECK(denoising_loss(null, x, t, c, eps).item() == doctest::Approx(mean_sq).epsilon(1e-14));
}

TEST_CASE("training reduces the loss") {
  dit::DiTConfig cfg;
  cfg.num_blocks = 2;
  cfg.hidden_size = 32;
  cfg.t_embed_dim = 32;
  auto w = dit::init_weights(cfg, 0);
  TrainOptions opt;
  opt.batch = 16;
  opt.learning_rate = 1e-3;
  Trainer trainer(w, ToyTask{}, NoiseSchedule{}, opt);
  for (int i = 0; i < 300; ++i) trainer.step();
  const auto& l = trainer.losses();
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += l[i] / 50;
    tail += l[l.size() - 1 - i] / 50;
  }
  CHECK(tail < 0.6 * head);

  std::mt19937_64 rng(0);
  AdamOptimizer adam(w.parameters());
  CHECK_THROWS(training_step(w, adam, Tensor::zeros({0, 16, 2}), std::vector<int>{}, NoiseSchedule{}, opt, rng));
}
