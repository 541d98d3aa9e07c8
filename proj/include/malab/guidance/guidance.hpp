#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "malab/activations/profile.hpp"
#include "malab/diffusion/sampler.hpp"
#include "malab/dit/weights.hpp"
#include "malab/intervention/intervention.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::guidance {

enum class Mode { cond, cfg, dg, cfg_dg };

std::string to_string(Mode mode);
// Accepts "cond", "cfg", "dg", "cfg+dg".
Mode parse_mode(const std::string& text);
// Forward passes per denoiser call: 1, 2, 2, 3.
std::size_t passes_per_call(Mode mode);

struct GuidanceSpec {
  Mode mode = Mode::cond;
  double lambda = 3.0;
  double w = 1.0;
  intervention::InterventionSpec intervention;

  // Throws ConfigError on negative or non-finite scales.
  void validate() const;
};

// uncond + lambda (cond - uncond), exact at lambda = 0 and lambda = 1.
Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double lambda);
// base + w (base - degraded).
Tensor dg_combine(const Tensor& base, const Tensor& degraded, double w);
// cond + lambda (cond - uncond) + w (cond - degraded), left to right.
Tensor cfg_dg_combine(const Tensor& cond, const Tensor& uncond, const Tensor& degraded,
                      double lambda, double w);
// cond + lambda (cond - uncond): the CFG part of cfg_dg_combine.
Tensor cfg_anchored(const Tensor& cond, const Tensor& uncond, double lambda);

struct GuidedDenoiser {
  diffusion::Denoiser denoise;
  // Forward passes made so far, shared by every copy of denoise.
  std::shared_ptr<std::size_t> passes;
};

// Denoiser for the spec's mode. cfg modes throw std::invalid_argument when
// called with the null id. dg modes build the degraded model up front.
GuidedDenoiser build_guided_denoiser(const dit::DiTWeights& weights, const GuidanceSpec& spec,
                                     const activations::MAProfile& profile);

}  // namespace malab::guidance
