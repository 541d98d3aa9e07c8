#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "malab/numerics/tensor.hpp"

namespace malab::activations {

struct DetectionParams {
  double kappa = 30.0;
  double rho = 0.9;
  // A token carries dimension d when |z[token, d]| exceeds kappa_tok times
  // the median |z| over the whole state.
  double kappa_tok = 10.0;

  // Throws ConfigError unless kappa > 1, rho in (0, 1], kappa_tok > 0.
  void validate() const;
};

struct ActivationStats {
  std::vector<double> mean_abs;
  std::vector<double> max_abs;
  std::vector<double> token_coverage;
  double median_of_means = 0.0;
  double top1 = 0.0;
  double top2 = 0.0;
  double top3 = 0.0;

  std::size_t width() const { return mean_abs.size(); }
};

// Per-dimension statistics of one hidden state [tokens, C].
ActivationStats compute_stats(const Tensor& z, double kappa_tok = 10.0);

// Dimension-wise average of several stats; the scalar summaries are
// recomputed from the averaged means.
ActivationStats average_stats(std::span<const ActivationStats> stats);

// { d : mean_abs[d] > kappa * median_of_means and token_coverage[d] >= rho },
// ascending.
std::vector<std::size_t> detect_ma(const ActivationStats& stats, double kappa, double rho);

double median(std::vector<double> values);

}  // namespace malab::activations
