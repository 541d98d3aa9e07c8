#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "malab/activations/profile.hpp"
#include "malab/activations/stats.hpp"
#include "malab/dit/constructed.hpp"
#include "malab/dit/model.hpp"
#include "malab/errors.hpp"
#include "support/testing.hpp"

using namespace malab;
using namespace malab::activations;
using malab::testing::random_tensor;

namespace {

Tensor outlier_state(std::size_t d_star) {
  std::vector<double> v;
  for (std::size_t tok = 0; tok < 16; ++tok)
    for (std::size_t d = 0; d < 64; ++d) {
      const double sign = ((tok + d) % 2) ? -1.0 : 1.0;
      v.push_back(sign * (d == d_star ? 100.0 : 1.0));
    }
  return Tensor({16, 64}, v);
}

}  // namespace

TEST_CASE("compute_stats examples") {
  const auto ones = compute_stats(Tensor::full({4, 4}, 1.0));
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(ones.mean_abs[d] == 1.0);
    CHECK(ones.token_coverage[d] == 0.0);
  }
  CHECK(ones.median_of_means == 1.0);

  const auto planted = compute_stats(outlier_state(9));
  CHECK(planted.mean_abs[9] == 100.0);
  CHECK(planted.median_of_means == 1.0);
  CHECK(planted.top1 == 100.0);
  CHECK(planted.top2 == 1.0);
  CHECK(planted.token_coverage[9] == 1.0);

  std::mt19937_64 rng(1);
  const auto gauss = compute_stats(random_tensor({16, 64}, rng));
  CHECK(gauss.median_of_means == doctest::Approx(std::sqrt(2.0 / std::numbers::pi)).epsilon(0.2));
  for (std::size_t d = 0; d < 64; ++d) {
    CHECK(gauss.mean_abs[d] <= gauss.max_abs[d]);
    CHECK((gauss.token_coverage[d] >= 0.0 && gauss.token_coverage[d] <= 1.0));
  }
  CHECK_THROWS_AS(compute_stats(Tensor::zeros({16})), ShapeError);
}

TEST_CASE("coverage counts tokens above kappa_tok times the global median") {
  // One dimension above threshold on 3 of 4 tokens.
  std::vector<double> v(4 * 8, 1.0);
  v[0 * 8 + 5] = v[1 * 8 + 5] = v[2 * 8 + 5] = 20.0;
  const auto s = compute_stats(Tensor({4, 8}, v), 10.0);
  CHECK(s.token_coverage[5] == 0.75);
  CHECK(s.token_coverage[4] == 0.0);
}

TEST_CASE("detect_ma examples") {
  const auto planted = compute_stats(outlier_state(9));
  CHECK(detect_ma(planted, 30.0, 0.9) == std::vector<std::size_t>{9});

  std::mt19937_64 rng(2);
  const auto gauss = compute_stats(random_tensor({16, 64}, rng));
  CHECK(detect_ma(gauss, 30.0, 0.9).empty());

  CHECK_THROWS(detect_ma(planted, 1.0, 0.9));
  CHECK_THROWS(detect_ma(planted, 30.0, 0.0));
  CHECK_THROWS(detect_ma(planted, 30.0, 1.1));
}

TEST_CASE("detect_ma is scale invariant") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, 63);
  std::uniform_real_distribution<double> mag(5.0, 200.0), factor(1e-3, 1e3);
  for (int rep = 0; rep < 20; ++rep) {
    auto z = random_tensor({16, 64}, rng);
    std::vector<double> v(z.data().begin(), z.data().end());
    const auto d = pick(rng);
    const double m = mag(rng);
    for (std::size_t tok = 0; tok < 16; ++tok) v[tok * 64 + d] = (tok % 2 ? -m : m);
    const Tensor base({16, 64}, v);
    const double k = factor(rng);
    std::vector<double> scaled(v);
    for (auto& x : scaled) x *= k;
    CHECK(detect_ma(compute_stats(base), 30.0, 0.9) == detect_ma(compute_stats(Tensor({16, 64}, scaled)), 30.0, 0.9));
  }
}

TEST_CASE("average_stats") {
  const auto a = compute_stats(outlier_state(3));
  const auto b = compute_stats(Tensor::full({16, 64}, 3.0));
  const std::vector<ActivationStats> both{a, b};
  const auto avg = average_stats(both);
  CHECK(avg.mean_abs[3] == 51.5);
  CHECK(avg.mean_abs[0] == 2.0);
  CHECK(avg.max_abs[3] == 100.0);
  CHECK(avg.median_of_means == 2.0);
  CHECK_THROWS(average_stats(std::vector<ActivationStats>{}));
}

TEST_CASE("detection params validation") {
  DetectionParams p;
  CHECK_NOTHROW(p.validate());
  p.kappa = -1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.rho = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("layer_profile on planted and identity models") {
  dit::DiTConfig cfg;
  const diffusion::NoiseSchedule schedule;
  const std::vector<int> conds{0, 4, 8};
  const DrawOptions draws{8, 1};

  dit::SpikePlan plan;
  const auto planted = dit::make_planted_spike(cfg, plan);
  const auto rows = layer_profile(planted, schedule, conds, draws);
  REQUIRE(rows.size() == cfg.num_blocks);
  for (const auto& r : rows) {
    CHECK(r.top1 >= r.top2);
    CHECK(r.top2 >= r.top3);
    if (r.block >= plan.block) {
      CHECK(r.top1 / r.median >= 30.0);
    } else {
      CHECK(r.top1 / r.median < 30.0);
    }
  }

  const auto identity = dit::init_weights(cfg, 3);
  const auto flat = layer_profile(identity, schedule, conds, draws);
  for (const auto& r : flat) CHECK(r.top1 / r.median == flat.front().top1 / flat.front().median);
}

TEST_CASE("build_profile on the planted model") {
  dit::DiTConfig cfg;
  dit::SpikePlan plan;
  const auto w = dit::make_planted_spike(cfg, plan);
  const std::vector<int> conds{1, 8};
  const auto profile = build_profile(w, 0.9, conds, {}, {8, 0});
  CHECK(profile.first_nonempty() == plan.block);
  for (std::size_t k = 1; k <= cfg.num_blocks; ++k) {
    if (k < plan.block) CHECK(profile.at(k).empty());
    else CHECK(profile.at(k) == std::vector<std::size_t>{plan.dim});
  }
  CHECK(profile.t == 0.9);
  CHECK(profile.conditions == conds);
  CHECK_THROWS_AS(profile.at(0), std::out_of_range);
  CHECK_THROWS_AS(profile.at(cfg.num_blocks + 1), std::out_of_range);
}

TEST_CASE("timestep_sweep") {
  dit::DiTConfig cfg;
  dit::SpikePlan plan;
  plan.time_decay = 0.6;
  const auto decaying = dit::make_planted_spike(cfg, plan);
  const std::vector<int> conds{0};
  const auto profile = build_profile(decaying, 1.5, conds, {}, {8, 0});
  std::vector<double> grid;
  for (int i = 10; i >= 1; --i) grid.push_back(0.3 * i);
  const auto mags = timestep_sweep(decaying, grid, 0, profile, {0, {8, 2}});
  for (std::size_t i = 1; i < mags.size(); ++i) CHECK(mags[i] > mags[i - 1]);

  plan.time_decay = 0.0;
  const auto constant = dit::make_planted_spike(cfg, plan);
  const auto flat = timestep_sweep(constant, grid, 0, profile, {0, {16, 2}});
  const auto [lo, hi] = std::minmax_element(flat.begin(), flat.end());
  CHECK(*hi / *lo < 1.05);

  const std::vector<double> one{1.2};
  const auto single = timestep_sweep(constant, one, 0, profile, {0, {8, 4}});
  CHECK(single.size() == 1);
  const auto stats = block_stats(constant, 1.2, 0, {8, 4}, 10.0)[plan.block - 1];
  CHECK(single[0] == doctest::Approx(stats.mean_abs[plan.dim]).epsilon(1e-12));

  MAProfile empty = profile;
  for (auto& d : empty.dims) d.clear();
  CHECK_THROWS(timestep_sweep(constant, one, 0, empty));
  CHECK_THROWS(timestep_sweep(constant, std::vector<double>{}, 0, profile));
}

TEST_CASE("condition_invariance") {
  dit::DiTConfig cfg;
  dit::SpikePlan plan;
  plan.ignore_condition = true;
  const auto blind = dit::make_planted_spike(cfg, plan);
  const std::vector<int> conds{0, 3, 5, 8};
  const auto profile = build_profile(blind, 1.5, conds, {}, {8, 0});
  const auto inv = condition_invariance(blind, 1.5, conds, profile, {0, {8, 0}});
  CHECK(inv.spread == 0.0);

  plan.ignore_condition = false;
  plan.class_spread = 2.0;
  const auto spread = dit::make_planted_spike(cfg, plan);
  const std::vector<int> real{0, 3, 7};
  const auto p2 = build_profile(spread, 1.5, real, {}, {8, 0});
  const auto r = condition_invariance(spread, 1.5, real, p2, {0, {8, 0}});
  CHECK(r.spread > 0.5);

  const std::vector<int> permuted{7, 0, 3};
  const auto rp = condition_invariance(spread, 1.5, permuted, p2, {0, {8, 0}});
  CHECK(rp.magnitudes[0] == r.magnitudes[2]);
  CHECK(rp.magnitudes[1] == r.magnitudes[0]);
  CHECK(rp.magnitudes[2] == r.magnitudes[1]);

  CHECK_THROWS(condition_invariance(spread, 1.5, std::vector<int>{0}, p2));
}

TEST_CASE("alpha_profile") {
  dit::DiTConfig cfg;
  dit::SpikePlan plan;
  const auto w = dit::make_planted_spike(cfg, plan);
  const auto ap = alpha_profile(w, 1.0, 2);
  CHECK(ap.argmax[plan.block - 1] == plan.dim);
  const auto profile = build_profile(w, 1.0, std::vector<int>{2}, {}, {8, 0});
  CHECK(profile.at(plan.block) == std::vector<std::size_t>{ap.argmax[plan.block - 1]});

  const auto zero = alpha_profile(dit::init_weights(cfg, 1), 1.0, 2);
  for (const auto& block : zero.ff_abs)
    for (double v : block) CHECK(v == 0.0);
}
