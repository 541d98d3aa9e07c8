#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "malab/diffusion/schedule.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::diffusion {

// Noise prediction for a batch z [batch, tokens, data_dim] sharing one
// timestep and one condition id.
using Denoiser = std::function<Tensor(const Tensor& z, double t, int condition)>;

struct SampleLayout {
  std::size_t tokens = 16;
  std::size_t data_dim = 2;
};

// Deterministic Euler probability-flow sampler. Starts from
// z ~ N(0, sigma_max^2) and for each step sets
//   x_hat = z - sigma(t_i) eps_hat,  z = x_hat + sigma(t_{i+1}) (z - x_hat) / sigma(t_i).
// Returns [count, tokens, data_dim].
Tensor euler_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, int condition,
                    std::uint64_t seed, std::size_t count, SampleLayout layout = {});

// The initial draw euler_sample starts from for (seed, count, layout).
Tensor initial_noise(const NoiseSchedule& schedule, std::uint64_t seed, std::size_t count,
                     SampleLayout layout);

}  // namespace malab::diffusion
