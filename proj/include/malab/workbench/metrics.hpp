#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "malab/numerics/tensor.hpp"

namespace malab::workbench {

// Mean over `projections` random unit directions of the 1-D 2-Wasserstein
// distance between the projected sets (RMS of sorted differences). Inputs
// are point sets [..., d] with the leading axes flattened; both must hold
// the same number of points, at least 2. Deterministic in seed.
double sliced_w2(const Tensor& a, const Tensor& b, std::size_t projections, std::uint64_t seed);

// Exact 1-D 2-Wasserstein distance between equal-size samples.
double w2_1d(std::vector<double> a, std::vector<double> b);

// Mean squared five-point Laplacian over the interior of a field [H, W]
// divided by the population variance of the whole field; 0 for a constant
// field. A field [H, W, K] is scored per channel and averaged.
double detail_energy(const Tensor& field);

// detail_energy of every sample in [n, H*W, K] laid out on an H x W grid,
// averaged over samples.
double sample_detail_energy(const Tensor& samples, std::size_t grid_h, std::size_t grid_w);

}  // namespace malab::workbench
