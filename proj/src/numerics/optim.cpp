#include "malab/numerics/optim.hpp"

#include <cmath>

#include "malab/errors.hpp"

namespace malab {

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::step(std::span<const Tensor> grads) {
  if (grads.size() != params_.size()) {
    throw ShapeError("AdamOptimizer::step: expected " + std::to_string(params_.size()) +
                     " gradients, got " + std::to_string(grads.size()));
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].shape() != params_[i].shape()) {
      throw ShapeError("AdamOptimizer::step: gradient " + shape_str(grads[i].shape()) +
                       " for parameter " + shape_str(params_[i].shape()));
    }
    auto p = params_[i].mutable_data();
    auto g = grads[i].data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= options_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.epsilon);
    }
    for (double x : p) {
      if (!std::isfinite(x)) throw NumericError("non-finite parameter after optimizer step");
    }
  }
}

}  // namespace malab
