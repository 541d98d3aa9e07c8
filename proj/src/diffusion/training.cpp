#include "malab/diffusion/training.hpp"

#include <stdexcept>

#include "malab/dit/model.hpp"
#include "malab/errors.hpp"
#include "malab/numerics/ops.hpp"

namespace malab::diffusion {

Predictor dit_predictor(const dit::DiTWeights& weights) {
  return [&weights](const Tensor& z_t, std::span<const double> t, std::span<const int> classes) {
    return dit::forward_batch(weights, z_t, t, classes).prediction;
  };
}

Tensor denoising_loss(const Predictor& predictor, const Tensor& x, std::span<const double> t,
                      std::span<const int> classes, const Tensor& eps) {
  if (x.rank() < 2 || x.shape() != eps.shape()) {
    throw ShapeError("denoising_loss: x " + shape_str(x.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const std::size_t batch = x.dim(0);
  if (t.size() != batch || classes.size() != batch) {
    throw ShapeError("denoising_loss: batch of " + std::to_string(batch) + " with " +
                     std::to_string(t.size()) + " timesteps and " + std::to_string(classes.size()) +
                     " classes");
  }
  const std::size_t per = x.size() / batch;
  std::vector<double> z(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < per; ++i) z[b * per + i] = x[b * per + i] + t[b] * eps[b * per + i];
  const Tensor z_t(x.shape(), std::move(z));
  return mse(predictor(z_t, t, classes), eps);
}

double training_step(dit::DiTWeights& weights, AdamOptimizer& optimizer, const Tensor& x,
                     std::span<const int> classes, const NoiseSchedule& schedule,
                     const TrainOptions& options, std::mt19937_64& rng) {
  if (classes.empty()) throw std::invalid_argument("training_step: empty batch");
  if (x.rank() != 3 || x.dim(0) != classes.size()) {
    throw ShapeError("training_step: x " + shape_str(x.shape()) + " with " +
                     std::to_string(classes.size()) + " classes");
  }
  const std::size_t batch = classes.size();
  // U(0, sigma_max]: 1 - U[0, 1) lies in (0, 1].
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  std::vector<double> t(batch);
  std::vector<int> cond(classes.begin(), classes.end());
  for (std::size_t b = 0; b < batch; ++b) {
    t[b] = schedule.sigma_max * (1.0 - unit(rng));
    if (unit(rng) < options.p_drop) cond[b] = weights.config.null_class();
  }
  std::vector<double> e(x.size());
  for (auto& v : e) v = normal(rng);
  const Tensor eps(x.shape(), std::move(e));

  const Tensor loss = denoising_loss(dit_predictor(weights), x, t, cond, eps);
  const auto params = weights.parameters();
  const auto grads = grad_of(loss, params);
  optimizer.step(grads);
  return loss.item();
}

Trainer::Trainer(dit::DiTWeights& weights, ToyTask task, NoiseSchedule schedule, TrainOptions options)
    : weights_(weights),
      task_(std::move(task)),
      schedule_(schedule),
      options_(options),
      rng_(options.seed),
      optimizer_(weights.parameters(), AdamOptions{.learning_rate = options.learning_rate}) {
  schedule_.validate();
  if (options_.batch == 0) throw ConfigError("training batch must be positive");
  if (weights_.config.num_classes != task_.num_classes() || weights_.config.data_dim != 2 ||
      weights_.config.tokens() != task_.tokens) {
    throw ConfigError("model config does not match the toy task");
  }
  weights_.set_requires_grad(true);
}

double Trainer::step() {
  const auto batch = task_.sample(options_.batch, rng_);
  const double loss = training_step(weights_, optimizer_, batch.x, batch.classes, schedule_, options_, rng_);
  losses_.push_back(loss);
  return loss;
}

}  // namespace malab::diffusion
