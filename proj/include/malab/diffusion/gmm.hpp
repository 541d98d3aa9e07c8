#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <vector>

#include "malab/diffusion/sampler.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::diffusion {

using Point = std::array<double, 2>;

// Isotropic planar Gaussian mixture with a shared component scale.
struct GMMSpec {
  std::vector<Point> means;
  double scale = 0.05;
  std::vector<double> weights;

  // Throws ConfigError on empty/mismatched components, negative scale, or
  // weights that are not positive or do not sum to 1 within 1e-12.
  void validate() const;
  std::size_t components() const { return means.size(); }
  // The single-component mixture for component i.
  GMMSpec component(std::size_t i) const;

  // n equal-weight components evenly spaced on a circle.
  static GMMSpec ring(std::size_t n, double radius, double scale);
};

// The default planar task mixture: 8 means on the unit circle, s = 0.05.
GMMSpec default_mixture();

// E[x | z] for x ~ gmm and z = x + sigma(t) * eps, with sigma(t) = t.
Point gmm_posterior_mean(const Point& z, double t, const GMMSpec& gmm);
// The matching noise prediction (z - E[x | z]) / sigma(t).
Point gmm_noise_prediction(const Point& z, double t, const GMMSpec& gmm);

// n direct draws as an [n, 2] tensor.
Tensor sample_gmm(const GMMSpec& gmm, std::size_t n, std::mt19937_64& rng);

// Class-conditional token task: a sample of class c holds `tokens` i.i.d.
// draws from mixture component c; the null id (== components) stands for
// the whole mixture.
struct ToyTask {
  GMMSpec gmm = default_mixture();
  std::size_t tokens = 16;

  int null_class() const { return static_cast<int>(gmm.components()); }
  std::size_t num_classes() const { return gmm.components() + 1; }

  struct Batch {
    Tensor x;  // [batch, tokens, 2]
    std::vector<int> classes;
  };
  // Classes are drawn uniformly over the real components.
  Batch sample(std::size_t batch, std::mt19937_64& rng) const;
  // `batch` samples of one class (null id draws each token from the mixture).
  Tensor sample_class(int condition, std::size_t batch, std::mt19937_64& rng) const;
};

// Analytic noise prediction for the task, applied token by token: the
// class component for real ids, the whole mixture for the null id.
Denoiser gmm_denoiser(const ToyTask& task);

}  // namespace malab::diffusion
