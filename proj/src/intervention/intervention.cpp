#include "malab/intervention/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "malab/dit/model.hpp"
#include "malab/errors.hpp"
#include "malab/numerics/ops.hpp"

namespace malab::intervention {

namespace {

void check_depth(std::size_t depth, const dit::DiTConfig& config) {
  if (depth < 1 || depth > config.num_blocks) {
    throw std::out_of_range("intervention depth " + std::to_string(depth) + " outside [1, " +
                            std::to_string(config.num_blocks) + "]");
  }
}

std::vector<std::size_t> random_control(const std::vector<std::size_t>& excluded, std::size_t width,
                                        std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t d = 0; d < width; ++d)
    if (!std::binary_search(excluded.begin(), excluded.end(), d)) pool.push_back(d);
  if (count > pool.size()) {
    throw std::invalid_argument("control_count " + std::to_string(count) + " exceeds the " +
                                std::to_string(pool.size()) + " non-MA dimensions");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> sorted_unique(std::vector<std::size_t> dims) {
  std::sort(dims.begin(), dims.end());
  dims.erase(std::unique(dims.begin(), dims.end()), dims.end());
  return dims;
}

Tensor predict(const dit::DiTWeights& weights, const Tensor& z, std::span<const double> t,
               std::span<const int> c, const dit::ForwardHook* hook) {
  NoGradGuard no_grad;
  dit::ForwardOptions opts;
  opts.hook = hook;
  return dit::forward_batch(weights, z, t, c, opts).prediction;
}

dit::ForwardHook mask_hook(std::size_t depth, std::vector<std::size_t> dims) {
  return {depth, [dims = std::move(dims)](const Tensor& h) { return mask_dimensions(h, dims); }};
}

double sorted_median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::ma_detected: return "ma-detected";
    case MaskMode::explicit_dims: return "explicit-dims";
    case MaskMode::random_control: return "random-control";
  }
  return "unknown";
}

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "ma-detected") return MaskMode::ma_detected;
  if (text == "explicit-dims") return MaskMode::explicit_dims;
  if (text == "random-control") return MaskMode::random_control;
  throw ConfigError("unknown intervention mode '" + text + "'");
}

Tensor mask_dimensions(const Tensor& z, std::span<const std::size_t> dims) {
  if (z.rank() == 0) throw ShapeError("mask_dimensions: scalar input");
  const std::size_t c = z.shape().back();
  for (auto d : dims) {
    if (d >= c) {
      throw std::out_of_range("mask dimension " + std::to_string(d) + " outside [0, " +
                              std::to_string(c) + ")");
    }
  }
  return zero_columns(z, dims);
}

std::vector<std::size_t> resolve_dims(const InterventionSpec& spec, const dit::DiTConfig& config,
                                      const activations::MAProfile& profile) {
  check_depth(spec.depth, config);
  const std::size_t c = config.hidden_size;
  switch (spec.mode) {
    case MaskMode::explicit_dims:
      for (auto d : spec.dims) {
        if (d >= c) {
          throw std::out_of_range("mask dimension " + std::to_string(d) + " outside [0, " +
                                  std::to_string(c) + ")");
        }
      }
      return sorted_unique(spec.dims);
    case MaskMode::ma_detected: {
      const auto& m = profile.at(spec.depth);
      if (m.empty()) {
        throw std::invalid_argument("no massive activations detected at depth " + std::to_string(spec.depth));
      }
      return sorted_unique(m);
    }
    case MaskMode::random_control:
      return random_control(sorted_unique(profile.at(spec.depth)), c, spec.control_count,
                            spec.control_seed);
  }
  throw std::invalid_argument("unknown intervention mode");
}

diffusion::Denoiser base_denoiser(const dit::DiTWeights& weights) {
  return [&weights](const Tensor& z, double t, int condition) {
    const std::vector<double> ts(z.dim(0), t);
    const std::vector<int> cs(z.dim(0), condition);
    return predict(weights, z, ts, cs, nullptr);
  };
}

diffusion::Denoiser make_degraded(const dit::DiTWeights& weights, const InterventionSpec& spec,
                                  const activations::MAProfile& profile) {
  auto hook = mask_hook(spec.depth, resolve_dims(spec, weights.config, profile));
  return [&weights, hook = std::move(hook)](const Tensor& z, double t, int condition) {
    const std::vector<double> ts(z.dim(0), t);
    const std::vector<int> cs(z.dim(0), condition);
    return predict(weights, z, ts, cs, &hook);
  };
}

double InterventionReport::median_l2(const std::string& arm) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.arm == arm) v.push_back(r.l2);
  return sorted_median(std::move(v));
}

double InterventionReport::mean_l2(const std::string& arm) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.arm == arm) v.push_back(r.l2);
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

InterventionReport intervention_report(const dit::DiTWeights& weights, std::size_t depth,
                                       const activations::MAProfile& profile,
                                       std::span<const ProbeInput> inputs,
                                       std::span<const std::uint64_t> control_seeds) {
  const auto& cfg = weights.config;
  check_depth(depth, cfg);
  if (inputs.empty()) throw std::invalid_argument("intervention_report: no inputs");
  const std::size_t tokens = cfg.tokens(), dim = cfg.data_dim, n = inputs.size();
  std::vector<double> zs;
  std::vector<double> ts;
  std::vector<int> cs;
  for (const auto& in : inputs) {
    if (in.z.shape() != Shape{tokens, dim}) {
      throw ShapeError("intervention_report: input " + shape_str(in.z.shape()) + " is not [" +
                       std::to_string(tokens) + ", " + std::to_string(dim) + "]");
    }
    zs.insert(zs.end(), in.z.data().begin(), in.z.data().end());
    ts.push_back(in.t);
    cs.push_back(in.condition);
  }
  const Tensor z({n, tokens, dim}, std::move(zs));
  const Tensor original = predict(weights, z, ts, cs, nullptr);

  InterventionReport report;
  report.depth = depth;
  report.ma_dims = sorted_unique(profile.at(depth));

  auto add_arm = [&](const std::string& arm, const std::vector<std::size_t>& dims, std::uint64_t seed) {
    const dit::ForwardHook hook = mask_hook(depth, dims);
    const Tensor masked = dims.empty() ? original : predict(weights, z, ts, cs, &hook);
    for (std::size_t i = 0; i < n; ++i) {
      DeltaRow row{arm, i, seed, 0.0, std::vector<double>(dim, 0.0)};
      for (std::size_t k = 0; k < tokens; ++k) {
        for (std::size_t d = 0; d < dim; ++d) {
          const std::size_t idx = (i * tokens + k) * dim + d;
          const double diff = masked[idx] - original[idx];
          row.l2 += diff * diff;
          row.per_dim[d] += diff * diff;
        }
      }
      row.l2 = std::sqrt(row.l2);
      for (auto& v : row.per_dim) v = std::sqrt(v / static_cast<double>(tokens));
      report.rows.push_back(std::move(row));
    }
  };
  add_arm("original", {}, 0);
  add_arm("ma-disrupted", report.ma_dims, 0);
  for (auto seed : control_seeds) {
    auto dims = random_control(report.ma_dims, cfg.hidden_size, report.ma_dims.size(), seed);
    add_arm("non-ma-disrupted", dims, seed);
    report.control_dims.push_back(std::move(dims));
  }
  return report;
}

}  // namespace malab::intervention
