#include "vmath.hpp"

#include <cmath>

namespace malab::detail {

void exp_into(const double* in, double* out, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(in[i]);
}

}  // namespace malab::detail
