#include "malab/dit/constructed.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "malab/errors.hpp"

namespace malab::dit {

namespace {

double silu_value(double x) { return x / (1.0 + std::exp(-x)); }

void set(Tensor& t, std::size_t row, std::size_t col, double v) {
  t.mutable_data()[row * t.dim(1) + col] = v;
}

void set(Tensor& t, std::size_t i, double v) { t.mutable_data()[i] = v; }

void zero_column(Tensor& t, std::size_t col) {
  for (std::size_t r = 0; r < t.dim(0); ++r) set(t, r, col, 0.0);
}

}  // namespace

DiTWeights make_planted_spike(const DiTConfig& config, const SpikePlan& plan) {
  config.validate();
  const std::size_t c = config.hidden_size;
  if (plan.block < 1 || plan.block > config.num_blocks) {
    throw ConfigError("spike block " + std::to_string(plan.block) + " outside [1, " +
                      std::to_string(config.num_blocks) + "]");
  }
  if (plan.dim >= c) throw ConfigError("spike dimension " + std::to_string(plan.dim) + " >= C");
  if (plan.time_decay < 0.0 || plan.time_decay >= 1.0) throw ConfigError("time_decay must be in [0, 1)");
  if (plan.class_spread < 0.0) throw ConfigError("class_spread must be nonnegative");
  if (plan.class_spread > 0.0 && plan.ignore_condition) {
    throw ConfigError("class_spread needs the condition pathway");
  }
  if (plan.class_spread > 0.0 && config.num_classes < 3) {
    throw ConfigError("class_spread needs at least two real classes");
  }
  if (config.modulation_hidden() < 2) throw ConfigError("modulation network too narrow for a plan");

  DiTWeights w = init_weights(config, plan.seed);
  std::mt19937_64 rng(plan.seed ^ 0x5eed5eedULL);
  std::uniform_real_distribution<double> w2_dist(-0.01, 0.01);
  std::uniform_real_distribution<double> alpha_dist(0.1, plan.background_alpha);

  for (auto& block : w.blocks) {
    for (auto& v : block.mod_w2.mutable_data()) v = w2_dist(rng);
    for (ModSlot s : {ModSlot::alpha_attn, ModSlot::alpha_ff}) {
      for (std::size_t d = 0; d < c; ++d) set(block.mod_b2, slot_offset(s, c) + d, alpha_dist(rng));
    }
    if (plan.ignore_condition) {
      for (auto& v : block.mod_w1_c.mutable_data()) v = 0.0;
    }
  }

  // Keep the spike dimension quiet at the input.
  zero_column(w.embed_w, plan.dim);
  set(w.embed_b, plan.dim, 0.0);
  zero_column(w.pos, plan.dim);

  BlockWeights& spike = w.blocks[plan.block - 1];
  zero_column(spike.wo, plan.dim);
  set(spike.bo, plan.dim, 1.0);
  zero_column(spike.ff_w2, plan.dim);
  set(spike.ff_b2, plan.dim, 1.0);

  const std::size_t hidden = config.modulation_hidden();
  const std::size_t e = config.t_embed_dim;
  for (ModSlot s : {ModSlot::alpha_attn, ModSlot::alpha_ff}) {
    const std::size_t col = slot_offset(s, c) + plan.dim;
    for (std::size_t j = 0; j < hidden; ++j) set(spike.mod_w2, j, col, 0.0);
    set(spike.mod_b2, col, plan.magnitude);
  }

  if (plan.time_decay > 0.0) {
    // Hidden unit 0 reads only the slowest sine feature, which rises
    // monotonically over the whole timestep range.
    const std::size_t unit = 0;
    const std::size_t slow_sin = e - 2;
    const double gain = 4.0, offset = 4.0;
    for (std::size_t r = 0; r < e; ++r) {
      set(spike.mod_w1_t, r, unit, 0.0);
      set(spike.mod_w1_c, r, unit, 0.0);
    }
    set(spike.mod_w1_t, slow_sin, unit, gain);
    set(spike.mod_b1, unit, offset);
    const double top_phase = 2.0 * std::numbers::pi / 1e4 * 1000.0;
    const double u0 = silu_value(offset);
    const double u1 = silu_value(offset + gain * std::sin(top_phase));
    const double g = plan.time_decay * plan.magnitude / (u1 - u0);
    for (ModSlot s : {ModSlot::alpha_attn, ModSlot::alpha_ff}) {
      const std::size_t col = slot_offset(s, c) + plan.dim;
      set(spike.mod_w2, unit, col, -g);
      set(spike.mod_b2, col, spike.mod_b2[col] + g * u0);
    }
  }

  if (plan.class_spread > 0.0) {
    // Hidden unit 1 reads column 0 of the class table, set to the class id.
    const std::size_t unit = 1;
    const double offset = 5.0;
    for (std::size_t cls = 0; cls < config.num_classes; ++cls) {
      set(w.class_table, cls, 0, static_cast<double>(cls));
    }
    for (std::size_t r = 0; r < e; ++r) {
      set(spike.mod_w1_t, r, unit, 0.0);
      set(spike.mod_w1_c, r, unit, 0.0);
    }
    set(spike.mod_w1_c, 0, unit, 1.0);
    set(spike.mod_b1, unit, offset);
    const double u_first = silu_value(offset);
    const double u_last = silu_value(offset + static_cast<double>(config.num_classes - 2));
    const double k = plan.class_spread * plan.magnitude / (u_last - u_first);
    for (ModSlot s : {ModSlot::alpha_attn, ModSlot::alpha_ff}) {
      const std::size_t col = slot_offset(s, c) + plan.dim;
      set(spike.mod_w2, unit, col, k);
      set(spike.mod_b2, col, spike.mod_b2[col] - k * u_first);
    }
  }
  return w;
}

}  // namespace malab::dit
