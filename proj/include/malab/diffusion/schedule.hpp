#pragma once

#include <cstddef>

#include "malab/numerics/tensor.hpp"

namespace malab::diffusion {

// Linear noise level sigma(t) = t on [0, sigma_max], discretized as
// t_i = sigma_max * (1 - i / steps) for i = 0..steps.
struct NoiseSchedule {
  double sigma_max = 3.0;
  std::size_t steps = 200;

  void validate() const;
  // Throws std::out_of_range outside [0, sigma_max].
  double sigma(double t) const;
  double time(std::size_t i) const;
};

// z_t = x + sigma(t) * eps.
Tensor forward_noise(const Tensor& x, double t, const Tensor& eps, const NoiseSchedule& schedule);

}  // namespace malab::diffusion
