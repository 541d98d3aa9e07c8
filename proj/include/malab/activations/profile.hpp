#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "malab/activations/stats.hpp"
#include "malab/diffusion/schedule.hpp"
#include "malab/dit/weights.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::activations {

// Detected massive-activation dimensions per block, with the settings that
// produced them.
struct MAProfile {
  std::vector<std::vector<std::size_t>> dims;  // index k-1 holds M_k
  DetectionParams params;
  double t = 0.0;
  std::vector<int> conditions;
  std::size_t samples = 0;

  std::size_t blocks() const { return dims.size(); }
  // M_depth for depth in [1, blocks()]; throws std::out_of_range otherwise.
  const std::vector<std::size_t>& at(std::size_t depth) const;
  // First depth with a nonempty set, or 0 when every set is empty.
  std::size_t first_nonempty() const;
};

struct DrawOptions {
  std::size_t draws = 64;
  std::uint64_t seed = 0;
};

// count noisy inputs z_t = x + t * eps, [count, tokens, data_dim]. x comes
// from the planar task for `condition` when the config matches it (ring of
// num_classes - 1 components) and is zero otherwise.
Tensor draw_inputs(const dit::DiTConfig& config, double t, int condition, std::size_t count,
                   std::uint64_t seed);

// Per-block stats at (t, c), averaged over options.draws inputs.
std::vector<ActivationStats> block_stats(const dit::DiTWeights& weights, double t, int condition,
                                         const DrawOptions& options, double kappa_tok);

// Per-block stats at t averaged over draws and every listed condition, then
// detect_ma per block.
MAProfile build_profile(const dit::DiTWeights& weights, double t, std::span<const int> conditions,
                        const DetectionParams& params, const DrawOptions& options = {});

struct LayerRow {
  std::size_t block = 0;  // 1-based
  double top1 = 0.0;
  double top2 = 0.0;
  double top3 = 0.0;
  double median = 0.0;
};

// Stats averaged over options.draws traces per condition, each draw at a
// time uniform in (0, sigma_max]. One row per block.
std::vector<LayerRow> layer_profile(const dit::DiTWeights& weights,
                                    const diffusion::NoiseSchedule& schedule,
                                    std::span<const int> conditions, const DrawOptions& options = {},
                                    double kappa_tok = 10.0);

struct SweepOptions {
  // Block to read; 0 selects the profile's first nonempty depth.
  std::size_t block = 0;
  DrawOptions draws;
};

// Mean over the profile's dimensions of mean_abs at one block, per t. Every
// grid point reuses the same noise draws.
std::vector<double> timestep_sweep(const dit::DiTWeights& weights, std::span<const double> t_grid,
                                   int condition, const MAProfile& profile,
                                   const SweepOptions& options = {});

struct ConditionInvariance {
  std::vector<double> magnitudes;  // per condition, in input order
  double spread = 0.0;             // (max - min) / mean
};

// MA magnitude per condition on one shared set of inputs.
ConditionInvariance condition_invariance(const dit::DiTWeights& weights, double t,
                                         std::span<const int> conditions, const MAProfile& profile,
                                         const SweepOptions& options = {});

struct AlphaProfile {
  std::vector<std::vector<double>> ff_abs;    // per block, |alpha_ff|
  std::vector<std::vector<double>> attn_abs;  // per block, |alpha_attn|
  std::vector<std::size_t> argmax;            // per block, argmax of ff_abs
};

AlphaProfile alpha_profile(const dit::DiTWeights& weights, double t, int condition);

}  // namespace malab::activations
