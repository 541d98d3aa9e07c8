#include "malab/diffusion/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "malab/errors.hpp"

namespace malab::diffusion {

void NoiseSchedule::validate() const {
  if (!(sigma_max > 0.0) || !std::isfinite(sigma_max)) throw ConfigError("sigma_max must be positive");
  if (steps == 0) throw ConfigError("schedule needs at least one step");
}

double NoiseSchedule::sigma(double t) const {
  if (!(t >= 0.0 && t <= sigma_max)) {
    throw std::out_of_range("t = " + std::to_string(t) + " outside [0, " +
                            std::to_string(sigma_max) + "]");
  }
  return t;
}

double NoiseSchedule::time(std::size_t i) const {
  if (i > steps) throw std::out_of_range("schedule index " + std::to_string(i) + " > " + std::to_string(steps));
  if (i == steps) return 0.0;
  return sigma_max * (1.0 - static_cast<double>(i) / static_cast<double>(steps));
}

Tensor forward_noise(const Tensor& x, double t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (x.shape() != eps.shape()) {
    throw ShapeError("forward_noise: x " + shape_str(x.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const double s = schedule.sigma(t);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s * eps[i];
  return Tensor(x.shape(), std::move(out));
}

}  // namespace malab::diffusion
