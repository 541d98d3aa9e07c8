#include "malab/activations/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "malab/errors.hpp"

namespace malab::activations {

void DetectionParams::validate() const {
  if (!(kappa > 1.0) || !std::isfinite(kappa)) throw ConfigError("detection kappa must exceed 1");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("detection rho must lie in (0, 1]");
  if (!(kappa_tok > 0.0) || !std::isfinite(kappa_tok)) throw ConfigError("detection kappa_tok must be positive");
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of no values");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

namespace {

void summarize(ActivationStats& s) {
  s.median_of_means = median(s.mean_abs);
  std::vector<double> sorted = s.mean_abs;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  s.top1 = sorted[0];
  s.top2 = sorted.size() > 1 ? sorted[1] : 0.0;
  s.top3 = sorted.size() > 2 ? sorted[2] : 0.0;
}

}  // namespace

ActivationStats compute_stats(const Tensor& z, double kappa_tok) {
  if (z.rank() != 2) throw ShapeError("compute_stats: expected [tokens, C], got " + shape_str(z.shape()));
  const std::size_t tokens = z.dim(0), c = z.dim(1);
  const auto v = z.data();
  std::vector<double> abs_all(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) abs_all[i] = std::abs(v[i]);
  const double cutoff = kappa_tok * median(abs_all);

  ActivationStats s;
  s.mean_abs.assign(c, 0.0);
  s.max_abs.assign(c, 0.0);
  s.token_coverage.assign(c, 0.0);
  for (std::size_t r = 0; r < tokens; ++r) {
    for (std::size_t d = 0; d < c; ++d) {
      const double a = abs_all[r * c + d];
      s.mean_abs[d] += a;
      s.max_abs[d] = std::max(s.max_abs[d], a);
      if (a > cutoff) s.token_coverage[d] += 1.0;
    }
  }
  for (std::size_t d = 0; d < c; ++d) {
    s.mean_abs[d] /= static_cast<double>(tokens);
    s.token_coverage[d] /= static_cast<double>(tokens);
  }
  summarize(s);
  return s;
}

ActivationStats average_stats(std::span<const ActivationStats> stats) {
  if (stats.empty()) throw std::invalid_argument("average_stats: no stats");
  const std::size_t c = stats.front().width();
  ActivationStats out;
  out.mean_abs.assign(c, 0.0);
  out.max_abs.assign(c, 0.0);
  out.token_coverage.assign(c, 0.0);
  for (const auto& s : stats) {
    if (s.width() != c) throw ShapeError("average_stats: mixed widths");
    for (std::size_t d = 0; d < c; ++d) {
      out.mean_abs[d] += s.mean_abs[d];
      out.max_abs[d] = std::max(out.max_abs[d], s.max_abs[d]);
      out.token_coverage[d] += s.token_coverage[d];
    }
  }
  const double n = static_cast<double>(stats.size());
  for (std::size_t d = 0; d < c; ++d) {
    out.mean_abs[d] /= n;
    out.token_coverage[d] /= n;
  }
  summarize(out);
  return out;
}

std::vector<std::size_t> detect_ma(const ActivationStats& stats, double kappa, double rho) {
  if (!(kappa > 1.0)) throw std::invalid_argument("detect_ma: kappa must exceed 1");
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("detect_ma: rho must lie in (0, 1]");
  std::vector<std::size_t> dims;
  const double bar = kappa * stats.median_of_means;
  for (std::size_t d = 0; d < stats.width(); ++d) {
    if (stats.mean_abs[d] > bar && stats.token_coverage[d] >= rho) dims.push_back(d);
  }
  return dims;
}

}  // namespace malab::activations
