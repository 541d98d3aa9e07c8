#include "malab/diffusion/sampler.hpp"

#include <random>

#include "malab/errors.hpp"

namespace malab::diffusion {

Tensor initial_noise(const NoiseSchedule& schedule, std::uint64_t seed, std::size_t count,
                     SampleLayout layout) {
  schedule.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> z(count * layout.tokens * layout.data_dim);
  for (auto& v : z) v = schedule.sigma_max * normal(rng);
  return Tensor({count, layout.tokens, layout.data_dim}, std::move(z));
}

Tensor euler_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, int condition,
                    std::uint64_t seed, std::size_t count, SampleLayout layout) {
  Tensor z = initial_noise(schedule, seed, count, layout);
  std::vector<double> next(z.size());
  for (std::size_t i = 0; i < schedule.steps; ++i) {
    const double t_now = schedule.time(i);
    const double s_now = schedule.sigma(t_now);
    const double s_next = schedule.sigma(schedule.time(i + 1));
    const Tensor eps = denoiser(z, t_now, condition);
    if (eps.shape() != z.shape()) {
      throw ShapeError("euler_sample: denoiser returned " + shape_str(eps.shape()) + " for input " +
                       shape_str(z.shape()));
    }
    for (std::size_t j = 0; j < next.size(); ++j) {
      const double x_hat = z[j] - s_now * eps[j];
      next[j] = x_hat + s_next * (z[j] - x_hat) / s_now;
    }
    z = Tensor(z.shape(), next);
  }
  return z;
}

}  // namespace malab::diffusion
