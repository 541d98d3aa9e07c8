#pragma once

#include <cstdint>
#include <string>

#include "malab/dit/weights.hpp"

namespace malab::workbench {

inline constexpr char kCheckpointMagic[4] = {'D', 'G', 'D', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout, little-endian throughout:
//   "DGDT", u16 version,
//   config: u32 num_blocks, hidden_size, num_heads, grid_h, grid_w, data_dim,
//           num_classes, t_embed_dim; f64 sigma_max,
//   u32 tensor count, then per tensor: u16 name length, name bytes, u8 rank,
//   u32 extents[rank], binary32 payload.
void save_checkpoint(const dit::DiTWeights& weights, const std::string& path);

// Throws BadMagicError, VersionError, TruncatedError (naming the tensor being
// read) or IoError for unreadable or inconsistent files.
dit::DiTWeights load_checkpoint(const std::string& path);

// Round every parameter to binary32 and back, i.e. what a save/load
// round trip yields.
dit::DiTWeights stored_precision(const dit::DiTWeights& weights);

}  // namespace malab::workbench
