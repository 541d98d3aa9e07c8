#pragma once

#include <cstddef>

namespace malab::detail {

// out[i] = exp(in[i]) using the vectorized libm entry points. in and out
// may alias exactly.
void exp_into(const double* in, double* out, std::size_t n);

}  // namespace malab::detail
