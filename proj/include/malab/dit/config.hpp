#pragma once

#include <cstddef>

namespace malab::dit {

// Architecture of the toy diffusion transformer.
struct DiTConfig {
  std::size_t num_blocks = 6;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 4;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t data_dim = 2;
  // Real classes plus the reserved null id, which is always num_classes - 1.
  std::size_t num_classes = 9;
  std::size_t t_embed_dim = 64;
  // Upper end of the timestep range the model accepts.
  double sigma_max = 3.0;

  std::size_t tokens() const { return grid_h * grid_w; }
  int null_class() const { return static_cast<int>(num_classes) - 1; }
  std::size_t modulation_hidden() const { return hidden_size; }
  std::size_t ff_hidden() const { return 4 * hidden_size; }

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  bool operator==(const DiTConfig&) const = default;
};

}  // namespace malab::dit
