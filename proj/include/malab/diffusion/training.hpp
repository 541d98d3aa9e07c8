#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "malab/diffusion/gmm.hpp"
#include "malab/diffusion/schedule.hpp"
#include "malab/dit/weights.hpp"
#include "malab/numerics/optim.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::diffusion {

struct TrainOptions {
  std::size_t batch = 128;
  double learning_rate = 3e-4;
  // Probability of replacing a sample's class by the null id.
  double p_drop = 0.1;
  std::uint64_t seed = 0;
};

// Per-sample noise prediction with per-sample t and class, recorded on the
// graph when its parameters require grad.
using Predictor = std::function<Tensor(const Tensor& z_t, std::span<const double> t,
                                       std::span<const int> classes)>;

Predictor dit_predictor(const dit::DiTWeights& weights);

// Mean squared error between predictor(x + sigma(t) eps, t, c) and eps.
Tensor denoising_loss(const Predictor& predictor, const Tensor& x, std::span<const double> t,
                      std::span<const int> classes, const Tensor& eps);

// One optimizer step on a batch (x [batch, tokens, dim], classes). Draws
// t ~ U(0, sigma_max], eps ~ N(0, I) and the condition drop from rng.
// Returns the batch loss before the update.
double training_step(dit::DiTWeights& weights, AdamOptimizer& optimizer, const Tensor& x,
                     std::span<const int> classes, const NoiseSchedule& schedule,
                     const TrainOptions& options, std::mt19937_64& rng);

// Stateful training loop over the toy task.
class Trainer {
 public:
  Trainer(dit::DiTWeights& weights, ToyTask task, NoiseSchedule schedule, TrainOptions options);

  double step();
  const std::vector<double>& losses() const { return losses_; }

 private:
  dit::DiTWeights& weights_;
  ToyTask task_;
  NoiseSchedule schedule_;
  TrainOptions options_;
  std::mt19937_64 rng_;
  AdamOptimizer optimizer_;
  std::vector<double> losses_;
};

}  // namespace malab::diffusion
