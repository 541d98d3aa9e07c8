#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "malab/numerics/tensor.hpp"

namespace malab {

// Raw row-major product c = a * b with index-ascending accumulation over
// the inner extent. c must hold m*n values.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor square(const Tensor& x);

// x[..., C] + b[C] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[..., C] * g[C] on every row.
Tensor mul_bias(const Tensor& x, const Tensor& gain);

// [B, C] -> [B*times, C]; row b is repeated `times` times consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t times);
// [R, C] -> [R*times, C]; the whole block is stacked `times` times.
Tensor tile_rows(const Tensor& x, std::size_t times);
// Columns [start, start+len) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
// Rows of `table` selected by `ids`.
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Same payload, new shape of equal element count.
Tensor reshape(const Tensor& x, Shape shape);
// Sets the listed last-axis columns to exactly zero on every row.
Tensor zero_columns(const Tensor& x, std::span<const std::size_t> cols);

Tensor layer_norm(const Tensor& x, double eps = 1e-6);
Tensor softmax_rows(const Tensor& x);
Tensor silu(const Tensor& x);

// Multi-head scaled dot-product self-attention. q, k, v are
// [groups*tokens, C]; each group attends only within itself and C is split
// into `heads` contiguous slices.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t groups,
                 std::size_t heads);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean of squared differences, a scalar.
Tensor mse(const Tensor& a, const Tensor& b);

// Reverse-mode gradients of a scalar `loss` with respect to `params`.
// Parameters the loss does not depend on receive zero tensors.
std::vector<Tensor> grad_of(const Tensor& loss, std::span<const Tensor> params);

}  // namespace malab
