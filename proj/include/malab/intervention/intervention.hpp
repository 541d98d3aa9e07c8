#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "malab/activations/profile.hpp"
#include "malab/diffusion/sampler.hpp"
#include "malab/dit/weights.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::intervention {

enum class MaskMode { ma_detected, explicit_dims, random_control };

std::string to_string(MaskMode mode);
// Accepts "ma-detected", "explicit-dims", "random-control".
MaskMode parse_mask_mode(const std::string& text);

struct InterventionSpec {
  std::size_t depth = 3;  // 1-based block index
  MaskMode mode = MaskMode::ma_detected;
  std::vector<std::size_t> dims;  // explicit-dims only
  std::size_t control_count = 0;  // random-control only
  std::uint64_t control_seed = 0;
};

// Copy of z with every column in dims set to exactly zero. Throws
// std::out_of_range for a dimension >= C.
Tensor mask_dimensions(const Tensor& z, std::span<const std::size_t> dims);

// Dimensions the spec masks, ascending. Throws std::out_of_range for a depth
// outside [1, N] or dims outside [0, C), std::invalid_argument for an empty
// M_m in ma-detected mode or control_count > C - |M_m|.
std::vector<std::size_t> resolve_dims(const InterventionSpec& spec, const dit::DiTConfig& config,
                                      const activations::MAProfile& profile);

// model_forward as a sampler denoiser.
diffusion::Denoiser base_denoiser(const dit::DiTWeights& weights);

// The base denoiser with the spec's mask applied to block m's output.
diffusion::Denoiser make_degraded(const dit::DiTWeights& weights, const InterventionSpec& spec,
                                  const activations::MAProfile& profile);

struct ProbeInput {
  Tensor z;  // tokens x data_dim
  double t = 0.0;
  int condition = 0;
};

struct DeltaRow {
  std::string arm;  // "original", "ma-disrupted", "non-ma-disrupted"
  std::size_t input = 0;
  std::uint64_t control_seed = 0;  // non-ma arm only
  double l2 = 0.0;                 // ||masked - original|| over the whole prediction
  std::vector<double> per_dim;     // RMS change per output data dimension
};

struct InterventionReport {
  std::size_t depth = 0;
  std::vector<std::size_t> ma_dims;
  std::vector<std::vector<std::size_t>> control_dims;  // per control seed
  std::vector<DeltaRow> rows;

  // Median / mean of l2 over the rows of one arm (order independent).
  double median_l2(const std::string& arm) const;
  double mean_l2(const std::string& arm) const;
};

// Three-arm comparison at `depth`: the unmasked model against itself, the
// profile's MA dimensions masked, and |M| random non-MA dimensions masked
// for each control seed. An empty M yields all-zero masked arms.
InterventionReport intervention_report(const dit::DiTWeights& weights, std::size_t depth,
                                       const activations::MAProfile& profile,
                                       std::span<const ProbeInput> inputs,
                                       std::span<const std::uint64_t> control_seeds);

}  // namespace malab::intervention
