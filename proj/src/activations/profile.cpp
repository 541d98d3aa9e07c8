#include "malab/activations/profile.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "malab/diffusion/gmm.hpp"
#include "malab/dit/model.hpp"
#include "malab/errors.hpp"

namespace malab::activations {

namespace {

constexpr std::size_t kChunk = 64;

Tensor draw_inputs_at(const dit::DiTConfig& config, std::span<const double> t, int condition,
                      std::mt19937_64& rng) {
  const std::size_t count = t.size(), tokens = config.tokens(), dim = config.data_dim;
  std::vector<double> z(count * tokens * dim, 0.0);
  if (dim == 2 && config.num_classes >= 2) {
    const diffusion::ToyTask task{diffusion::GMMSpec::ring(config.num_classes - 1, 1.0, 0.05), tokens};
    const Tensor x = task.sample_class(condition, count, rng);
    std::copy(x.data().begin(), x.data().end(), z.begin());
  }
  std::normal_distribution<double> normal;
  const std::size_t per = tokens * dim;
  for (std::size_t b = 0; b < count; ++b)
    for (std::size_t i = 0; i < per; ++i) z[b * per + i] += t[b] * normal(rng);
  return Tensor({count, tokens, dim}, std::move(z));
}

void check_condition(const dit::DiTConfig& config, int c) {
  if (c < 0 || static_cast<std::size_t>(c) >= config.num_classes) {
    throw std::out_of_range("condition id " + std::to_string(c) + " outside [0, " +
                            std::to_string(config.num_classes) + ")");
  }
}

// Traces of `inputs` at per-sample times, reduced to stats per block and
// appended to per_block.
void collect(const dit::DiTWeights& weights, const Tensor& inputs, std::span<const double> t,
             int condition, double kappa_tok, std::vector<std::vector<ActivationStats>>& per_block) {
  const std::vector<int> conds(t.size(), condition);
  dit::ForwardOptions opts;
  opts.trace = true;
  const auto result = dit::forward_batch(weights, inputs, t, conds, opts);
  for (const auto& trace : result.traces)
    for (std::size_t k = 0; k < trace.blocks.size(); ++k)
      per_block[k].push_back(compute_stats(trace.blocks[k].hidden, kappa_tok));
}

std::vector<std::vector<ActivationStats>> gather(const dit::DiTWeights& weights,
                                                 std::span<const double> t, int condition,
                                                 std::uint64_t seed, double kappa_tok) {
  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<ActivationStats>> per_block(weights.config.num_blocks);
  for (std::size_t start = 0; start < t.size(); start += kChunk) {
    const auto ts = t.subspan(start, std::min(kChunk, t.size() - start));
    collect(weights, draw_inputs_at(weights.config, ts, condition, rng), ts, condition, kappa_tok,
            per_block);
  }
  return per_block;
}

double ma_magnitude(const ActivationStats& stats, const std::vector<std::size_t>& dims) {
  double total = 0.0;
  for (auto d : dims) total += stats.mean_abs.at(d);
  return total / static_cast<double>(dims.size());
}

std::size_t sweep_block(const MAProfile& profile, const SweepOptions& options, std::size_t blocks) {
  if (profile.blocks() != blocks) {
    throw ShapeError("profile covers " + std::to_string(profile.blocks()) + " blocks, model has " +
                     std::to_string(blocks));
  }
  const std::size_t block = options.block ? options.block : profile.first_nonempty();
  if (block == 0) throw std::invalid_argument("MA profile is empty at every block");
  if (profile.at(block).empty()) {
    throw std::invalid_argument("MA profile is empty at block " + std::to_string(block));
  }
  return block;
}

}  // namespace

const std::vector<std::size_t>& MAProfile::at(std::size_t depth) const {
  if (depth < 1 || depth > dims.size()) {
    throw std::out_of_range("profile depth " + std::to_string(depth) + " outside [1, " +
                            std::to_string(dims.size()) + "]");
  }
  return dims[depth - 1];
}

std::size_t MAProfile::first_nonempty() const {
  for (std::size_t k = 0; k < dims.size(); ++k)
    if (!dims[k].empty()) return k + 1;
  return 0;
}

Tensor draw_inputs(const dit::DiTConfig& config, double t, int condition, std::size_t count,
                   std::uint64_t seed) {
  check_condition(config, condition);
  std::mt19937_64 rng(seed);
  const std::vector<double> ts(count, t);
  return draw_inputs_at(config, ts, condition, rng);
}

std::vector<ActivationStats> block_stats(const dit::DiTWeights& weights, double t, int condition,
                                         const DrawOptions& options, double kappa_tok) {
  check_condition(weights.config, condition);
  if (options.draws == 0) throw std::invalid_argument("block_stats: no draws");
  const std::vector<double> ts(options.draws, t);
  const auto per_block = gather(weights, ts, condition, options.seed, kappa_tok);
  std::vector<ActivationStats> out;
  for (const auto& s : per_block) out.push_back(average_stats(s));
  return out;
}

MAProfile build_profile(const dit::DiTWeights& weights, double t, std::span<const int> conditions,
                        const DetectionParams& params, const DrawOptions& options) {
  params.validate();
  if (conditions.empty()) throw std::invalid_argument("build_profile: no conditions");
  if (options.draws == 0) throw std::invalid_argument("build_profile: no draws");
  const std::size_t n = weights.config.num_blocks;
  std::vector<std::vector<ActivationStats>> per_block(n);
  const std::vector<double> ts(options.draws, t);
  for (int c : conditions) {
    check_condition(weights.config, c);
    auto part = gather(weights, ts, c, options.seed, params.kappa_tok);
    for (std::size_t k = 0; k < n; ++k)
      per_block[k].insert(per_block[k].end(), part[k].begin(), part[k].end());
  }
  MAProfile profile;
  profile.params = params;
  profile.t = t;
  profile.conditions.assign(conditions.begin(), conditions.end());
  profile.samples = options.draws * conditions.size();
  for (const auto& s : per_block) profile.dims.push_back(detect_ma(average_stats(s), params.kappa, params.rho));
  return profile;
}

std::vector<LayerRow> layer_profile(const dit::DiTWeights& weights,
                                    const diffusion::NoiseSchedule& schedule,
                                    std::span<const int> conditions, const DrawOptions& options,
                                    double kappa_tok) {
  schedule.validate();
  if (options.draws == 0) throw std::invalid_argument("layer_profile: sample count must be positive");
  if (conditions.empty()) throw std::invalid_argument("layer_profile: no conditions");
  const std::size_t n = weights.config.num_blocks;
  std::vector<std::vector<ActivationStats>> per_block(n);
  std::mt19937_64 time_rng(options.seed ^ 0x7157ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    check_condition(weights.config, conditions[i]);
    std::vector<double> ts(options.draws);
    for (auto& t : ts) t = schedule.sigma_max * (1.0 - unit(time_rng));
    auto part = gather(weights, ts, conditions[i], options.seed + i, kappa_tok);
    for (std::size_t k = 0; k < n; ++k)
      per_block[k].insert(per_block[k].end(), part[k].begin(), part[k].end());
  }
  std::vector<LayerRow> rows;
  for (std::size_t k = 0; k < n; ++k) {
    const auto s = average_stats(per_block[k]);
    rows.push_back({k + 1, s.top1, s.top2, s.top3, s.median_of_means});
  }
  return rows;
}

std::vector<double> timestep_sweep(const dit::DiTWeights& weights, std::span<const double> t_grid,
                                   int condition, const MAProfile& profile,
                                   const SweepOptions& options) {
  if (t_grid.empty()) throw std::invalid_argument("timestep_sweep: empty grid");
  const std::size_t block = sweep_block(profile, options, weights.config.num_blocks);
  std::vector<double> out;
  for (double t : t_grid) {
    const auto stats = block_stats(weights, t, condition, options.draws, profile.params.kappa_tok);
    out.push_back(ma_magnitude(stats[block - 1], profile.at(block)));
  }
  return out;
}

ConditionInvariance condition_invariance(const dit::DiTWeights& weights, double t,
                                         std::span<const int> conditions, const MAProfile& profile,
                                         const SweepOptions& options) {
  if (conditions.size() < 2) throw std::invalid_argument("condition_invariance: needs at least 2 conditions");
  const std::size_t block = sweep_block(profile, options, weights.config.num_blocks);
  if (options.draws.draws == 0) throw std::invalid_argument("condition_invariance: no draws");
  for (int c : conditions) check_condition(weights.config, c);
  // Inputs are drawn once, from the unconditional data distribution.
  const Tensor inputs = draw_inputs(weights.config, t, weights.config.null_class(),
                                    options.draws.draws, options.draws.seed);
  const std::vector<double> ts(options.draws.draws, t);
  ConditionInvariance out;
  NoGradGuard no_grad;
  for (int c : conditions) {
    std::vector<std::vector<ActivationStats>> per_block(weights.config.num_blocks);
    for (std::size_t start = 0; start < ts.size(); start += kChunk) {
      const std::size_t len = std::min(kChunk, ts.size() - start);
      const std::size_t per = inputs.size() / inputs.dim(0);
      std::vector<double> chunk(inputs.data().begin() + start * per,
                                inputs.data().begin() + (start + len) * per);
      const Tensor part({len, inputs.dim(1), inputs.dim(2)}, std::move(chunk));
      collect(weights, part, std::span(ts).subspan(start, len), c, profile.params.kappa_tok, per_block);
    }
    out.magnitudes.push_back(ma_magnitude(average_stats(per_block[block - 1]), profile.at(block)));
  }
  const auto [lo, hi] = std::minmax_element(out.magnitudes.begin(), out.magnitudes.end());
  double mean = 0.0;
  for (double m : out.magnitudes) mean += m;
  mean /= static_cast<double>(out.magnitudes.size());
  out.spread = mean != 0.0 ? (*hi - *lo) / mean : 0.0;
  return out;
}

AlphaProfile alpha_profile(const dit::DiTWeights& weights, double t, int condition) {
  const auto alphas = dit::block_alphas(weights, t, condition);
  AlphaProfile out;
  for (const auto& [ff, attn] : alphas) {
    std::vector<double> f(ff.size()), a(attn.size());
    for (std::size_t d = 0; d < f.size(); ++d) f[d] = std::abs(ff[d]);
    for (std::size_t d = 0; d < a.size(); ++d) a[d] = std::abs(attn[d]);
    out.argmax.push_back(static_cast<std::size_t>(std::max_element(f.begin(), f.end()) - f.begin()));
    out.ff_abs.push_back(std::move(f));
    out.attn_abs.push_back(std::move(a));
  }
  return out;
}

}  // namespace malab::activations
