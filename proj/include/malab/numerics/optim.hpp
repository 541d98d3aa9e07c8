#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "malab/numerics/tensor.hpp"

namespace malab {

struct AdamOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second-moment adaptive update, applied in place to leaf tensors.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, AdamOptions options = {});

  void step(std::span<const Tensor> grads);
  std::size_t steps_taken() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

}  // namespace malab
