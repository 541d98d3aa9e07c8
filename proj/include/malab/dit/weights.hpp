#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "malab/dit/config.hpp"
#include "malab/numerics/tensor.hpp"

namespace malab::dit {

// Parameters of one transformer block D_k.
struct BlockWeights {
  // Modulation network: silu(t_emb W1t + c_emb W1c + b1) W2 + b2 -> 6C.
  // Output layout: gamma_attn, beta_attn, alpha_attn, gamma_ff, beta_ff, alpha_ff.
  Tensor mod_w1_t, mod_w1_c, mod_b1, mod_w2, mod_b2;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

// Offsets of the six C-wide slots in the modulation output.
enum class ModSlot : std::size_t {
  gamma_attn = 0,
  beta_attn = 1,
  alpha_attn = 2,
  gamma_ff = 3,
  beta_ff = 4,
  alpha_ff = 5,
};

inline std::size_t slot_offset(ModSlot slot, std::size_t hidden) {
  return static_cast<std::size_t>(slot) * hidden;
}

struct DiTWeights {
  DiTConfig config;
  Tensor embed_w, embed_b;  // data_dim -> C
  Tensor pos;               // tokens x C
  Tensor class_table;       // num_classes x t_embed_dim
  std::vector<BlockWeights> blocks;
  Tensor out_w, out_b;  // C -> data_dim

  // Every parameter with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  // Deep copy; the copy shares no buffers with this one.
  DiTWeights clone(bool requires_grad = false) const;
  void set_requires_grad(bool on);
};

// Final modulation layer starts at zero so every block is the identity.
// Other matrices are uniform in +-1/sqrt(fan_in) (lookup tables count as
// fan_in 1); biases start at zero.
DiTWeights init_weights(const DiTConfig& config, std::uint64_t seed);

// Expected shape of each named parameter for a config.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const DiTConfig& config);

}  // namespace malab::dit
