#include "malab/dit/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "malab/errors.hpp"
#include "malab/numerics/ops.hpp"

namespace malab::dit {

namespace {

constexpr double kTimeScale = 1000.0;
constexpr double kMaxPeriod = 1e4;
constexpr double kNormEps = 1e-6;

// Broadcast a per-group [G, C] tensor (or a plain [C] vector) over rows.
Tensor scale_rows(const Tensor& x, const Tensor& factor, std::size_t groups) {
  if (factor.rank() == 1) return mul_bias(x, factor);
  if (groups == 0 || x.dim(0) % groups != 0) {
    throw ShapeError("row scale: " + shape_str(x.shape()) + " not divisible into " +
                     std::to_string(groups) + " groups");
  }
  return mul(x, repeat_rows(factor, x.dim(0) / groups));
}

Tensor shift_rows(const Tensor& x, const Tensor& shift, std::size_t groups) {
  if (shift.rank() == 1) return add_bias(x, shift);
  if (groups == 0 || x.dim(0) % groups != 0) {
    throw ShapeError("row shift: " + shape_str(x.shape()) + " not divisible into " +
                     std::to_string(groups) + " groups");
  }
  return add(x, repeat_rows(shift, x.dim(0) / groups));
}

void check_time(double t, const DiTConfig& cfg) {
  if (!(t >= 0.0 && t <= cfg.sigma_max)) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(cfg.sigma_max) + "]");
  }
}

void check_condition(int c, const DiTConfig& cfg) {
  if (c < 0 || static_cast<std::size_t>(c) >= cfg.num_classes) {
    throw std::out_of_range("condition id " + std::to_string(c) + " outside [0, " +
                            std::to_string(cfg.num_classes) + ")");
  }
}

Tensor rows_of(const Tensor& x, std::size_t first, std::size_t count) {
  const std::size_t c = x.dim(1);
  std::vector<double> out(x.data().begin() + first * c, x.data().begin() + (first + count) * c);
  return count == 1 ? Tensor({c}, std::move(out)) : Tensor({count, c}, std::move(out));
}

}  // namespace

Tensor timestep_embedding(double t, std::size_t dim, double sigma_max) {
  if (dim == 0 || dim % 2 != 0) {
    throw std::invalid_argument("timestep_embedding: dim must be positive and even, got " +
                                std::to_string(dim));
  }
  if (!(sigma_max > 0.0)) throw std::invalid_argument("timestep_embedding: sigma_max must be positive");
  const std::size_t half = dim / 2;
  const double scaled = t * kTimeScale / sigma_max;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    const double period = std::pow(kMaxPeriod, exponent);
    const double phase = 2.0 * std::numbers::pi / period * scaled;
    out[2 * i] = std::sin(phase);
    out[2 * i + 1] = std::cos(phase);
  }
  return Tensor({dim}, std::move(out));
}

BlockModulation regress_modulation(const Tensor& t_emb, const Tensor& c_emb,
                                   const BlockWeights& block) {
  if (t_emb.rank() != c_emb.rank() || t_emb.rank() < 1 || t_emb.rank() > 2) {
    throw ShapeError("regress_modulation: embeddings " + shape_str(t_emb.shape()) + " and " +
                     shape_str(c_emb.shape()) + " must both be vectors or matrices");
  }
  const bool single = t_emb.rank() == 1;
  const Tensor t2 = single ? reshape(t_emb, {1, t_emb.dim(0)}) : t_emb;
  const Tensor c2 = single ? reshape(c_emb, {1, c_emb.dim(0)}) : c_emb;
  if (t2.dim(0) != c2.dim(0)) {
    throw ShapeError("regress_modulation: batch mismatch " + shape_str(t_emb.shape()) + " vs " +
                     shape_str(c_emb.shape()));
  }
  const Tensor hidden =
      silu(add_bias(add(matmul(t2, block.mod_w1_t), matmul(c2, block.mod_w1_c)), block.mod_b1));
  const Tensor out = add_bias(matmul(hidden, block.mod_w2), block.mod_b2);
  if (out.dim(1) % 6 != 0) {
    throw ShapeError("regress_modulation: output width " + std::to_string(out.dim(1)) +
                     " is not 6*C");
  }
  const std::size_t c = out.dim(1) / 6;
  auto slot = [&](ModSlot s) {
    Tensor v = slice_cols(out, slot_offset(s, c), c);
    return single ? reshape(v, {c}) : v;
  };
  return {{slot(ModSlot::gamma_attn), slot(ModSlot::beta_attn), slot(ModSlot::alpha_attn)},
          {slot(ModSlot::gamma_ff), slot(ModSlot::beta_ff), slot(ModSlot::alpha_ff)}};
}

Tensor adaln_apply(const Tensor& z, const Tensor& gamma, const Tensor& beta) {
  if (z.rank() != 2 || gamma.shape() != beta.shape() || gamma.shape().back() != z.dim(1)) {
    throw ShapeError("adaln_apply: z " + shape_str(z.shape()) + ", gamma " +
                     shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  const std::size_t groups = gamma.rank() == 1 ? 1 : gamma.dim(0);
  const Tensor normed = layer_norm(z, kNormEps);
  return shift_rows(scale_rows(normed, add_scalar(gamma, 1.0), groups), beta, groups);
}

Tensor block_forward(const Tensor& z, const BlockModulation& mod, const BlockWeights& block,
                     const DiTConfig& config, std::size_t groups,
                     const std::function<Tensor(const Tensor&)>* hook) {
  if (z.rank() != 2 || z.dim(1) != config.hidden_size) {
    throw ShapeError("block_forward: hidden state " + shape_str(z.shape()) + " does not have " +
                     std::to_string(config.hidden_size) + " columns");
  }
  const Tensor x = adaln_apply(z, mod.attn.gamma, mod.attn.beta);
  const Tensor q = add_bias(matmul(x, block.wq), block.bq);
  const Tensor k = add_bias(matmul(x, block.wk), block.bk);
  const Tensor v = add_bias(matmul(x, block.wv), block.bv);
  const Tensor attn = add_bias(matmul(attention(q, k, v, groups, config.num_heads), block.wo), block.bo);
  const Tensor z1 = add(z, scale_rows(attn, mod.attn.alpha, groups));

  const Tensor x2 = adaln_apply(z1, mod.ff.gamma, mod.ff.beta);
  const Tensor ff = add_bias(matmul(silu(add_bias(matmul(x2, block.ff_w1), block.ff_b1)), block.ff_w2),
                             block.ff_b2);
  Tensor z2 = add(z1, scale_rows(ff, mod.ff.alpha, groups));
  if (hook && *hook) z2 = (*hook)(z2);
  return z2;
}

Tensor block_forward(const Tensor& z, const Tensor& t_emb, const Tensor& c_emb,
                     const BlockWeights& block, const DiTConfig& config,
                     const std::function<Tensor(const Tensor&)>* hook) {
  const BlockModulation mod = regress_modulation(t_emb, c_emb, block);
  const std::size_t groups = t_emb.rank() == 1 ? 1 : t_emb.dim(0);
  return block_forward(z, mod, block, config, groups, hook);
}

BatchForwardResult forward_batch(const DiTWeights& weights, const Tensor& z_t,
                                 std::span<const double> t, std::span<const int> conditions,
                                 const ForwardOptions& options) {
  const DiTConfig& cfg = weights.config;
  const std::size_t tokens = cfg.tokens();
  if (z_t.rank() != 3 || z_t.dim(1) != tokens || z_t.dim(2) != cfg.data_dim) {
    throw ShapeError("forward_batch: z_t " + shape_str(z_t.shape()) + " is not [batch, " +
                     std::to_string(tokens) + ", " + std::to_string(cfg.data_dim) + "]");
  }
  const std::size_t batch = z_t.dim(0);
  if (t.size() != batch || conditions.size() != batch) {
    throw ShapeError("forward_batch: " + std::to_string(batch) + " samples but " +
                     std::to_string(t.size()) + " timesteps and " +
                     std::to_string(conditions.size()) + " conditions");
  }
  for (double ti : t) check_time(ti, cfg);
  for (int c : conditions) check_condition(c, cfg);
  if (options.hook && (options.hook->depth < 1 || options.hook->depth > cfg.num_blocks)) {
    throw std::out_of_range("hook depth " + std::to_string(options.hook->depth) + " outside [1, " +
                            std::to_string(cfg.num_blocks) + "]");
  }

  const std::size_t e = cfg.t_embed_dim;
  std::vector<double> te(batch * e);
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor emb = timestep_embedding(t[b], e, cfg.sigma_max);
    std::copy(emb.data().begin(), emb.data().end(), te.begin() + b * e);
  }
  const Tensor t_emb({batch, e}, std::move(te));
  const Tensor c_emb = embedding(weights.class_table, conditions);

  const Tensor x = reshape(z_t, {batch * tokens, cfg.data_dim});
  Tensor h = add(add_bias(matmul(x, weights.embed_w), weights.embed_b), tile_rows(weights.pos, batch));

  BatchForwardResult result;
  if (options.trace) {
    result.traces.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      result.traces[b].t = t[b];
      result.traces[b].condition = conditions[b];
    }
  }
  for (std::size_t k = 0; k < cfg.num_blocks; ++k) {
    const BlockModulation mod = regress_modulation(t_emb, c_emb, weights.blocks[k]);
    const bool hooked = options.hook && options.hook->depth == k + 1;
    h = block_forward(h, mod, weights.blocks[k], cfg, batch,
                      hooked ? &options.hook->transform : nullptr);
    if (options.trace) {
      for (std::size_t b = 0; b < batch; ++b) {
        result.traces[b].blocks.push_back(TraceEntry{
            rows_of(h, b * tokens, tokens).detach(),
            rows_of(mod.attn.alpha, b, 1).detach(),
            rows_of(mod.ff.alpha, b, 1).detach(),
        });
      }
    }
  }
  const Tensor out = add_bias(matmul(layer_norm(h, kNormEps), weights.out_w), weights.out_b);
  result.prediction = reshape(out, {batch, tokens, cfg.data_dim});
  return result;
}

ForwardResult model_forward(const DiTWeights& weights, const Tensor& z_t, double t, int condition,
                            const ForwardOptions& options) {
  const DiTConfig& cfg = weights.config;
  if (z_t.rank() != 2 || z_t.dim(0) != cfg.tokens() || z_t.dim(1) != cfg.data_dim) {
    throw ShapeError("model_forward: z_t " + shape_str(z_t.shape()) + " is not [" +
                     std::to_string(cfg.tokens()) + ", " + std::to_string(cfg.data_dim) + "]");
  }
  const double ts[1] = {t};
  const int cs[1] = {condition};
  auto batch = forward_batch(weights, reshape(z_t, {1, cfg.tokens(), cfg.data_dim}), ts, cs, options);
  ForwardResult result{reshape(batch.prediction, {cfg.tokens(), cfg.data_dim}), std::nullopt};
  if (options.trace) result.trace = std::move(batch.traces.front());
  return result;
}

std::vector<std::pair<Tensor, Tensor>> block_alphas(const DiTWeights& weights, double t,
                                                    int condition) {
  const DiTConfig& cfg = weights.config;
  check_time(t, cfg);
  check_condition(condition, cfg);
  NoGradGuard no_grad;
  const Tensor t_emb = timestep_embedding(t, cfg.t_embed_dim, cfg.sigma_max);
  const int ids[1] = {condition};
  const Tensor c_emb = reshape(embedding(weights.class_table, ids), {cfg.t_embed_dim});
  std::vector<std::pair<Tensor, Tensor>> out;
  for (const auto& block : weights.blocks) {
    const BlockModulation mod = regress_modulation(t_emb, c_emb, block);
    out.emplace_back(mod.ff.alpha, mod.attn.alpha);
  }
  return out;
}

}  // namespace malab::dit
