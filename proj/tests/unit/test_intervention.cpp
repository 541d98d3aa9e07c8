#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "malab/activations/profile.hpp"
#include "malab/dit/constructed.hpp"
#include "malab/intervention/intervention.hpp"
#include "support/testing.hpp"

using namespace malab;
using namespace malab::intervention;
using malab::testing::random_tensor;

namespace {

struct Planted {
  dit::DiTConfig cfg;
  dit::SpikePlan plan;
  dit::DiTWeights weights = dit::make_planted_spike(cfg, plan);
  activations::MAProfile profile =
      activations::build_profile(weights, 1.5, std::vector<int>{0, 8}, {}, {8, 0});
};

std::vector<ProbeInput> probes(const dit::DiTConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(0.1, 3.0);
  std::vector<ProbeInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({random_tensor({cfg.tokens(), 2}, rng), ut(rng), static_cast<int>(i % 9)});
  }
  return out;
}

}  // namespace

TEST_CASE("mask_dimensions semantics") {
  std::mt19937_64 rng(1);
  const auto z = random_tensor({4, 6}, rng);
  CHECK(bitwise_equal(mask_dimensions(z, std::vector<std::size_t>{}), z));
  const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  CHECK(bitwise_equal(mask_dimensions(z, all), Tensor::zeros({4, 6})));

  const auto m = mask_dimensions(Tensor::full({4, 4}, 1.0), std::vector<std::size_t>{2});
  std::size_t ones = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(m.at(r, 2) == 0.0);
    for (std::size_t c = 0; c < 4; ++c) ones += m.at(r, c) == 1.0;
  }
  CHECK(ones == 12);
  CHECK_THROWS_AS(mask_dimensions(z, std::vector<std::size_t>{6}), std::out_of_range);
}

TEST_CASE("masking is idempotent and order free") {
  std::mt19937_64 rng(2);
  const std::vector<std::size_t> d{1, 4}, e{4, 0};
  std::vector<std::size_t> both{1, 4, 0};
  for (int rep = 0; rep < 10; ++rep) {
    const auto z = random_tensor({3, 6}, rng);
    CHECK(bitwise_equal(mask_dimensions(mask_dimensions(z, d), d), mask_dimensions(z, d)));
    CHECK(bitwise_equal(mask_dimensions(mask_dimensions(z, d), e), mask_dimensions(z, both)));
    CHECK(bitwise_equal(mask_dimensions(mask_dimensions(z, e), d), mask_dimensions(z, both)));
  }
}

TEST_CASE("mask mode names") {
  for (auto m : {MaskMode::ma_detected, MaskMode::explicit_dims, MaskMode::random_control}) {
    CHECK(parse_mask_mode(to_string(m)) == m);
  }
  CHECK_THROWS(parse_mask_mode("soft"));
}

TEST_CASE("resolve_dims") {
  Planted p;
  InterventionSpec spec;
  spec.depth = 4;
  CHECK(resolve_dims(spec, p.cfg, p.profile) == std::vector<std::size_t>{p.plan.dim});

  spec.mode = MaskMode::random_control;
  spec.control_count = 5;
  spec.control_seed = 9;
  const auto a = resolve_dims(spec, p.cfg, p.profile);
  CHECK(a == resolve_dims(spec, p.cfg, p.profile));
  CHECK(a.size() == 5);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::find(a.begin(), a.end(), p.plan.dim) == a.end());
  spec.control_seed = 10;
  CHECK(resolve_dims(spec, p.cfg, p.profile) != a);
  spec.control_count = p.cfg.hidden_size;
  CHECK_THROWS_AS(resolve_dims(spec, p.cfg, p.profile), std::invalid_argument);

  spec = {};
  spec.depth = 1;
  CHECK_THROWS_AS(resolve_dims(spec, p.cfg, p.profile), std::invalid_argument);
  spec.depth = p.cfg.num_blocks + 1;
  CHECK_THROWS_AS(resolve_dims(spec, p.cfg, p.profile), std::out_of_range);
  spec.depth = p.cfg.num_blocks;
  CHECK_NOTHROW(resolve_dims(spec, p.cfg, p.profile));
  spec.mode = MaskMode::explicit_dims;
  spec.dims = {p.cfg.hidden_size};
  CHECK_THROWS_AS(resolve_dims(spec, p.cfg, p.profile), std::out_of_range);
}

TEST_CASE("make_degraded") {
  Planted p;
  std::mt19937_64 rng(3);
  const auto base = base_denoiser(p.weights);
  InterventionSpec empty;
  empty.mode = MaskMode::explicit_dims;
  const auto same = make_degraded(p.weights, empty, p.profile);
  for (int rep = 0; rep < 10; ++rep) {
    const auto z = random_tensor({2, p.cfg.tokens(), 2}, rng);
    CHECK(bitwise_equal(same(z, 1.0, rep % 9), base(z, 1.0, rep % 9)));
  }

  InterventionSpec last;
  last.depth = p.cfg.num_blocks;
  const auto at_last = make_degraded(p.weights, last, p.profile);
  const auto z = random_tensor({1, p.cfg.tokens(), 2}, rng);
  CHECK_FALSE(bitwise_equal(at_last(z, 1.0, 0), base(z, 1.0, 0)));
}

TEST_CASE("intervention_report") {
  Planted p;
  const auto inputs = probes(p.cfg, 20, 4);
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const auto r = intervention_report(p.weights, p.plan.block, p.profile, inputs, seeds);
  CHECK(r.ma_dims == std::vector<std::size_t>{p.plan.dim});
  CHECK(r.control_dims.size() == 5);
  CHECK(r.median_l2("original") == 0.0);
  CHECK(r.median_l2("ma-disrupted") > 0.0);
  CHECK(r.median_l2("ma-disrupted") >= 5.0 * r.median_l2("non-ma-disrupted"));
  CHECK(r.rows.size() == 20 * (1 + 1 + 5));

  auto reversed = inputs;
  std::reverse(reversed.begin(), reversed.end());
  const auto rr = intervention_report(p.weights, p.plan.block, p.profile, reversed, seeds);
  for (const char* arm : {"original", "ma-disrupted", "non-ma-disrupted"}) {
    CHECK(rr.median_l2(arm) == r.median_l2(arm));
    CHECK(rr.mean_l2(arm) == r.mean_l2(arm));
  }

  const auto before = intervention_report(p.weights, 1, p.profile, inputs, seeds);
  CHECK(before.ma_dims.empty());
  for (const auto& row : before.rows) {
    if (row.arm == "ma-disrupted") CHECK(row.l2 == 0.0);
  }
  CHECK_THROWS(intervention_report(p.weights, 3, p.profile, std::vector<ProbeInput>{}, seeds));
}
