#pragma once

#include <cstddef>
#include <cstdint>

#include "malab/dit/weights.hpp"

namespace malab::dit {

// Recipe for a hand-built model whose residual scaling factor carries a
// single large entry. Used to reproduce massive-activation mechanics
// without training.
struct SpikePlan {
  std::size_t block = 3;  // 1-based depth of the spiking block
  std::size_t dim = 17;   // spiking hidden dimension
  double magnitude = 100.0;
  // alpha(sigma_max) = magnitude * (1 - time_decay); alpha decreases
  // strictly in t when positive, and is exactly constant in t when zero.
  double time_decay = 0.0;
  // alpha for the last real class = magnitude * (1 + class_spread),
  // increasing with the class id.
  double class_spread = 0.0;
  // Zeroes the condition pathway of every modulation network.
  bool ignore_condition = false;
  // Upper bound on the bias of every other alpha entry.
  double background_alpha = 0.5;
  std::uint64_t seed = 7;
};

// Random base weights with the spike planted in both residual branches of
// plan.block. The spike block's attention and feedforward outputs are
// exactly 1 at plan.dim, and nothing writes plan.dim before that block
// except small background residuals.
DiTWeights make_planted_spike(const DiTConfig& config, const SpikePlan& plan);

}  // namespace malab::dit
