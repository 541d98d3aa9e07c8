#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "malab/dit/weights.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::dit {

// gamma, beta and alpha for one residual branch.
struct ModulationParams {
  Tensor gamma;
  Tensor beta;
  Tensor alpha;
};

struct BlockModulation {
  ModulationParams attn;
  ModulationParams ff;
};

// Replaces the output of block `depth` (1-based) with transform(output).
struct ForwardHook {
  std::size_t depth = 0;
  std::function<Tensor(const Tensor&)> transform;
};

struct TraceEntry {
  Tensor hidden;      // block output, tokens x C
  Tensor alpha_attn;  // C
  Tensor alpha_ff;    // C
};

// Hidden states captured during one forward pass of one sample.
struct HiddenTrace {
  double t = 0.0;
  int condition = 0;
  std::vector<TraceEntry> blocks;
};

struct ForwardOptions {
  bool trace = false;
  const ForwardHook* hook = nullptr;
};

struct ForwardResult {
  Tensor prediction;
  std::optional<HiddenTrace> trace;
};

struct BatchForwardResult {
  Tensor prediction;                // batch x tokens x data_dim
  std::vector<HiddenTrace> traces;  // one per sample when requested
};

// Interleaved sin/cos features of t. Angular frequencies are 2*pi/P for
// periods P log-spaced over [1, 1e4], applied to t rescaled so that
// sigma_max maps to 1000.
Tensor timestep_embedding(double t, std::size_t dim, double sigma_max);

// Six C-vectors from the block's modulation network. t_emb and c_emb are
// either vectors or [batch, dim] matrices; outputs follow the same layout.
BlockModulation regress_modulation(const Tensor& t_emb, const Tensor& c_emb,
                                   const BlockWeights& block);

// (1 + gamma) * layer_norm(z) + beta per token. gamma/beta are [C] or
// [groups, C]; in the grouped form z has groups * tokens rows and each
// group of consecutive rows uses its own row of gamma/beta.
Tensor adaln_apply(const Tensor& z, const Tensor& gamma, const Tensor& beta);

// One transformer block over z [groups*tokens, C]:
//   z += alpha_attn * Attn(adaln(z)); z += alpha_ff * FF(adaln(z))
// then the hook (if any) transforms the result.
Tensor block_forward(const Tensor& z, const BlockModulation& mod, const BlockWeights& block,
                     const DiTConfig& config, std::size_t groups,
                     const std::function<Tensor(const Tensor&)>* hook = nullptr);

// Convenience overload computing the modulation from embeddings.
Tensor block_forward(const Tensor& z, const Tensor& t_emb, const Tensor& c_emb,
                     const BlockWeights& block, const DiTConfig& config,
                     const std::function<Tensor(const Tensor&)>* hook = nullptr);

// Noise prediction for one sample z_t [tokens, data_dim].
ForwardResult model_forward(const DiTWeights& weights, const Tensor& z_t, double t, int condition,
                            const ForwardOptions& options = {});

// Batched forward over z_t [batch, tokens, data_dim] with per-sample t and
// condition. Samples never interact.
BatchForwardResult forward_batch(const DiTWeights& weights, const Tensor& z_t,
                                 std::span<const double> t, std::span<const int> conditions,
                                 const ForwardOptions& options = {});

// Feedforward-branch and attention-branch alpha per block for one (t, c).
std::vector<std::pair<Tensor, Tensor>> block_alphas(const DiTWeights& weights, double t,
                                                    int condition);

}  // namespace malab::dit
