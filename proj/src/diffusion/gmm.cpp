#include "malab/diffusion/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "malab/errors.hpp"
#include "malab/numerics/ops.hpp"

namespace malab::diffusion {

void GMMSpec::validate() const {
  if (means.empty()) throw ConfigError("GMM needs at least one component");
  if (weights.size() != means.size()) throw ConfigError("GMM weights and means differ in count");
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("GMM scale must be nonnegative");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("GMM weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("GMM weights must sum to 1");
}

GMMSpec GMMSpec::component(std::size_t i) const {
  if (i >= means.size()) throw std::out_of_range("GMM component " + std::to_string(i));
  return GMMSpec{{means[i]}, scale, {1.0}};
}

GMMSpec GMMSpec::ring(std::size_t n, double radius, double scale) {
  GMMSpec g;
  g.scale = scale;
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    g.means.push_back({radius * std::cos(angle), radius * std::sin(angle)});
  }
  g.weights.assign(n, 1.0 / static_cast<double>(n));
  return g;
}

GMMSpec default_mixture() { return GMMSpec::ring(8, 1.0, 0.05); }

Point gmm_posterior_mean(const Point& z, double t, const GMMSpec& gmm) {
  if (!(t > 0.0)) throw std::domain_error("gmm_posterior_mean needs t > 0");
  const double s2 = gmm.scale * gmm.scale;
  const double var = s2 + t * t;
  const double shrink = s2 / var;
  const std::size_t n = gmm.components();
  std::vector<double> logp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = z[0] - gmm.means[i][0], dy = z[1] - gmm.means[i][1];
    logp[i] = std::log(gmm.weights[i]) - 0.5 * (dx * dx + dy * dy) / var;
  }
  const double top = *std::max_element(logp.begin(), logp.end());
  double norm = 0.0;
  for (auto& l : logp) {
    l = std::exp(l - top);
    norm += l;
  }
  Point out{0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double r = logp[i] / norm;
    for (int d = 0; d < 2; ++d) out[d] += r * (gmm.means[i][d] + shrink * (z[d] - gmm.means[i][d]));
  }
  return out;
}

Point gmm_noise_prediction(const Point& z, double t, const GMMSpec& gmm) {
  const Point m = gmm_posterior_mean(z, t, gmm);
  return {(z[0] - m[0]) / t, (z[1] - m[1]) / t};
}

Tensor sample_gmm(const GMMSpec& gmm, std::size_t n, std::mt19937_64& rng) {
  gmm.validate();
  std::discrete_distribution<std::size_t> pick(gmm.weights.begin(), gmm.weights.end());
  std::normal_distribution<double> normal;
  std::vector<double> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& mu = gmm.means[pick(rng)];
    out[2 * i] = mu[0] + gmm.scale * normal(rng);
    out[2 * i + 1] = mu[1] + gmm.scale * normal(rng);
  }
  return Tensor({n, 2}, std::move(out));
}

ToyTask::Batch ToyTask::sample(std::size_t batch, std::mt19937_64& rng) const {
  gmm.validate();
  std::uniform_int_distribution<int> pick(0, static_cast<int>(gmm.components()) - 1);
  std::normal_distribution<double> normal;
  Batch out;
  std::vector<double> x(batch * tokens * 2);
  for (std::size_t b = 0; b < batch; ++b) {
    const int c = pick(rng);
    out.classes.push_back(c);
    for (std::size_t k = 0; k < tokens; ++k) {
      for (int d = 0; d < 2; ++d) x[(b * tokens + k) * 2 + d] = gmm.means[c][d] + gmm.scale * normal(rng);
    }
  }
  out.x = Tensor({batch, tokens, 2}, std::move(x));
  return out;
}

Tensor ToyTask::sample_class(int condition, std::size_t batch, std::mt19937_64& rng) const {
  if (condition < 0 || condition > null_class()) {
    throw std::out_of_range("task class " + std::to_string(condition));
  }
  if (condition == null_class()) {
    return reshape(sample_gmm(gmm, batch * tokens, rng), {batch, tokens, 2});
  }
  std::normal_distribution<double> normal;
  std::vector<double> x(batch * tokens * 2);
  for (std::size_t i = 0; i < batch * tokens; ++i) {
    for (int d = 0; d < 2; ++d) x[i * 2 + d] = gmm.means[condition][d] + gmm.scale * normal(rng);
  }
  return Tensor({batch, tokens, 2}, std::move(x));
}

Denoiser gmm_denoiser(const ToyTask& task) {
  return [task](const Tensor& z, double t, int condition) {
    if (z.rank() != 3 || z.dim(2) != 2) {
      throw ShapeError("gmm_denoiser: z " + shape_str(z.shape()) + " is not [batch, tokens, 2]");
    }
    if (condition < 0 || condition > task.null_class()) {
      throw std::out_of_range("gmm_denoiser: condition " + std::to_string(condition));
    }
    const GMMSpec gmm = condition == task.null_class()
                            ? task.gmm
                            : task.gmm.component(static_cast<std::size_t>(condition));
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size() / 2; ++i) {
      const Point e = gmm_noise_prediction({z[2 * i], z[2 * i + 1]}, t, gmm);
      out[2 * i] = e[0];
      out[2 * i + 1] = e[1];
    }
    return Tensor(z.shape(), std::move(out));
  };
}

}  // namespace malab::diffusion
