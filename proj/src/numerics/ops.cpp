#include "malab/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "malab/errors.hpp"
#include "vmath.hpp"

namespace malab {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::size_t last_extent(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": scalar input");
  return x.shape().back();
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(x.shape()));
  }
}

void accumulate(std::vector<double>* dst, std::span<const double> src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

std::vector<double> transpose(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

using Lane = double __attribute__((vector_size(64)));
constexpr std::size_t kLane = sizeof(Lane) / sizeof(double);
constexpr std::size_t kTileCols = 2 * kLane;

// Operand layout for the left factor: element (row r, reduction index p)
// sits at a[r * row_stride + p * red_stride].
struct LeftOperand {
  const double* a;
  std::size_t row_stride;
  std::size_t red_stride;
};

// MR rows x 16 columns of c, accumulated over p = 0..k-1 in order. With
// Accumulate the finished sums are added to c instead of overwriting it.
template <std::size_t MR, bool Accumulate>
void gemm_tile(LeftOperand l, const double* b, double* c, std::size_t k, std::size_t n) {
  Lane acc[MR][2] = {};
  for (std::size_t p = 0; p < k; ++p) {
    Lane b0, b1;
    __builtin_memcpy(&b0, b + p * n, sizeof(Lane));
    __builtin_memcpy(&b1, b + p * n + kLane, sizeof(Lane));
    const double* ap = l.a + p * l.red_stride;
    for (std::size_t r = 0; r < MR; ++r) {
      const double av = ap[r * l.row_stride];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t h = 0; h < 2; ++h) {
      double* dst = c + r * n + h * kLane;
      if constexpr (Accumulate) {
        Lane old;
        __builtin_memcpy(&old, dst, sizeof(Lane));
        acc[r][h] = old + acc[r][h];
      }
      __builtin_memcpy(dst, &acc[r][h], sizeof(Lane));
    }
  }
}

template <std::size_t MR, bool Accumulate>
void gemm_rows(LeftOperand l, const double* b, double* c, std::size_t k, std::size_t n,
               std::size_t n_full) {
  for (std::size_t j = 0; j < n_full; j += kTileCols) gemm_tile<MR, Accumulate>(l, b + j, c + j, k, n);
}

template <bool Accumulate>
void gemm_general(LeftOperand l, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  constexpr std::size_t MR = 6;
  const std::size_t n_full = n - n % kTileCols;
  auto rows_from = [&](std::size_t i) {
    return LeftOperand{l.a + i * l.row_stride, l.row_stride, l.red_stride};
  };
  std::size_t i = 0;
  for (; i + MR <= m; i += MR) gemm_rows<MR, Accumulate>(rows_from(i), b, c + i * n, k, n, n_full);
  switch (m - i) {
    case 5: gemm_rows<5, Accumulate>(rows_from(i), b, c + i * n, k, n, n_full); break;
    case 4: gemm_rows<4, Accumulate>(rows_from(i), b, c + i * n, k, n, n_full); break;
    case 3: gemm_rows<3, Accumulate>(rows_from(i), b, c + i * n, k, n, n_full); break;
    case 2: gemm_rows<2, Accumulate>(rows_from(i), b, c + i * n, k, n, n_full); break;
    case 1: gemm_rows<1, Accumulate>(rows_from(i), b, c + i * n, k, n, n_full); break;
    default: break;
  }
  // Leftover columns, same per-element accumulation order.
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = n_full; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += l.a[r * l.row_stride + p * l.red_stride] * b[p * n + j];
      if constexpr (Accumulate) {
        c[r * n + j] = c[r * n + j] + acc;
      } else {
        c[r * n + j] = acc;
      }
    }
  }
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n) {
  gemm_general<false>({a.data(), k, 1}, b.data(), c.data(), m, k, n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  gemm(a.data(), b.data(), out, m, k, n);
  return Tensor::record({m, n}, std::move(out), {a, b},
                        [m, k, n](const detail::Node& self, std::span<const double> g,
                                  std::span<std::vector<double>* const> grads) {
                          const auto& av = self.inputs[0]->data;
                          const auto& bv = self.inputs[1]->data;
                          if (grads[0]) {
                            // dA += g * B^T
                            const auto bt = transpose(bv, k, n);
                            gemm_general<true>({g.data(), n, 1}, bt.data(), grads[0]->data(), m, n, k);
                          }
                          if (grads[1]) {
                            // dB += A^T * g, reading A in place.
                            gemm_general<true>({av.data(), 1, k}, g.data(), grads[1]->data(), k, m, n);
                          }
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::record(a.shape(), std::move(out), {a, b},
                        [](const detail::Node&, std::span<const double> g,
                           std::span<std::vector<double>* const> grads) {
                          accumulate(grads[0], g);
                          accumulate(grads[1], g);
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::record(a.shape(), std::move(out), {a, b},
                        [](const detail::Node&, std::span<const double> g,
                           std::span<std::vector<double>* const> grads) {
                          accumulate(grads[0], g);
                          if (grads[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::record(a.shape(), std::move(out), {a, b},
                        [](const detail::Node& self, std::span<const double> g,
                           std::span<std::vector<double>* const> grads) {
                          const auto& av = self.inputs[0]->data;
                          const auto& bv = self.inputs[1]->data;
                          if (grads[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * bv[i];
                          if (grads[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * av[i];
                        });
}

Tensor scale(const Tensor& x, double s) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  return Tensor::record(x.shape(), std::move(out), {x},
                        [s](const detail::Node&, std::span<const double> g,
                            std::span<std::vector<double>* const> grads) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * s;
                        });
}

Tensor add_scalar(const Tensor& x, double s) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + s;
  return Tensor::record(x.shape(), std::move(out), {x},
                        [](const detail::Node&, std::span<const double> g,
                           std::span<std::vector<double>* const> grads) {
                          accumulate(grads[0], g);
                        });
}

Tensor square(const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  return Tensor::record(x.shape(), std::move(out), {x},
                        [](const detail::Node& self, std::span<const double> g,
                           std::span<std::vector<double>* const> grads) {
                          const auto& xv = self.inputs[0]->data;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            (*grads[0])[i] += 2.0 * xv[i] * g[i];
                        });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t c = last_extent(x, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != c) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                     shape_str(x.shape()));
  }
  const auto xv = x.data(), bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < out.size(); r += c)
    for (std::size_t j = 0; j < c; ++j) out[r + j] = xv[r + j] + bv[j];
  return Tensor::record(x.shape(), std::move(out), {x, bias},
                        [c](const detail::Node&, std::span<const double> g,
                            std::span<std::vector<double>* const> grads) {
                          accumulate(grads[0], g);
                          if (grads[1]) {
                            auto& gb = *grads[1];
                            for (std::size_t r = 0; r < g.size(); r += c)
                              for (std::size_t j = 0; j < c; ++j) gb[j] += g[r + j];
                          }
                        });
}

Tensor mul_bias(const Tensor& x, const Tensor& gain) {
  const std::size_t c = last_extent(x, "mul_bias");
  if (gain.rank() != 1 || gain.dim(0) != c) {
    throw ShapeError("mul_bias: gain " + shape_str(gain.shape()) + " does not fit " +
                     shape_str(x.shape()));
  }
  const auto xv = x.data(), gv = gain.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < out.size(); r += c)
    for (std::size_t j = 0; j < c; ++j) out[r + j] = xv[r + j] * gv[j];
  return Tensor::record(x.shape(), std::move(out), {x, gain},
                        [c](const detail::Node& self, std::span<const double> g,
                            std::span<std::vector<double>* const> grads) {
                          const auto& xv = self.inputs[0]->data;
                          const auto& gv = self.inputs[1]->data;
                          if (grads[0]) {
                            auto& gx = *grads[0];
                            for (std::size_t r = 0; r < g.size(); r += c)
                              for (std::size_t j = 0; j < c; ++j) gx[r + j] += g[r + j] * gv[j];
                          }
                          if (grads[1]) {
                            auto& gg = *grads[1];
                            for (std::size_t r = 0; r < g.size(); r += c)
                              for (std::size_t j = 0; j < c; ++j) gg[j] += g[r + j] * xv[r + j];
                          }
                        });
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  require_matrix(x, "repeat_rows");
  if (times == 0) throw ShapeError("repeat_rows: times must be positive");
  const std::size_t rows = x.dim(0), c = x.dim(1);
  std::vector<double> out(rows * times * c);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(x.data().begin() + r * c, c, out.begin() + (r * times + t) * c);
  return Tensor::record({rows * times, c}, std::move(out), {x},
                        [rows, times, c](const detail::Node&, std::span<const double> g,
                                         std::span<std::vector<double>* const> grads) {
                          auto& gx = *grads[0];
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t t = 0; t < times; ++t)
                              for (std::size_t j = 0; j < c; ++j)
                                gx[r * c + j] += g[(r * times + t) * c + j];
                        });
}

Tensor tile_rows(const Tensor& x, std::size_t times) {
  require_matrix(x, "tile_rows");
  if (times == 0) throw ShapeError("tile_rows: times must be positive");
  const std::size_t rows = x.dim(0), c = x.dim(1), block = rows * c;
  std::vector<double> out(block * times);
  for (std::size_t t = 0; t < times; ++t)
    std::copy(x.data().begin(), x.data().end(), out.begin() + t * block);
  return Tensor::record({rows * times, c}, std::move(out), {x},
                        [block, times](const detail::Node&, std::span<const double> g,
                                       std::span<std::vector<double>* const> grads) {
                          auto& gx = *grads[0];
                          for (std::size_t t = 0; t < times; ++t)
                            for (std::size_t i = 0; i < block; ++i) gx[i] += g[t * block + i];
                        });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  require_matrix(x, "slice_cols");
  const std::size_t rows = x.dim(0), c = x.dim(1);
  if (len == 0 || start + len > c) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") outside " + shape_str(x.shape()));
  }
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + r * c + start, len, out.begin() + r * len);
  return Tensor::record({rows, len}, std::move(out), {x},
                        [rows, c, start, len](const detail::Node&, std::span<const double> g,
                                              std::span<std::vector<double>* const> grads) {
                          auto& gx = *grads[0];
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < len; ++j) gx[r * c + start + j] += g[r * len + j];
                        });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: no ids");
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().begin() + idx[i] * d, d, out.begin() + i * d);
  }
  return Tensor::record({idx.size(), d}, std::move(out), {table},
                        [idx, d](const detail::Node&, std::span<const double> g,
                                 std::span<std::vector<double>* const> grads) {
                          auto& gt = *grads[0];
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::record(std::move(shape), std::move(out), {x},
                        [](const detail::Node&, std::span<const double> g,
                           std::span<std::vector<double>* const> grads) {
                          accumulate(grads[0], g);
                        });
}

Tensor zero_columns(const Tensor& x, std::span<const std::size_t> cols) {
  const std::size_t c = last_extent(x, "zero_columns");
  std::vector<char> masked(c, 0);
  for (auto col : cols) {
    if (col >= c) {
      throw ShapeError("zero_columns: column " + std::to_string(col) + " outside [0, " +
                       std::to_string(c) + ")");
    }
    masked[col] = 1;
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (masked[i % c]) out[i] = 0.0;
  return Tensor::record(x.shape(), std::move(out), {x},
                        [masked, c](const detail::Node&, std::span<const double> g,
                                    std::span<std::vector<double>* const> grads) {
                          auto& gx = *grads[0];
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (!masked[i % c]) gx[i] += g[i];
                        });
}

Tensor layer_norm(const Tensor& x, double eps) {
  const std::size_t c = last_extent(x, "layer_norm");
  if (c < 2) throw ShapeError("layer_norm: last axis must have at least 2 entries");
  if (!(eps >= 0.0)) throw ShapeError("layer_norm: eps must be nonnegative");
  const std::size_t rows = x.size() / c;
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    // A constant row with eps = 0 normalizes to zero.
    const double denom = std::sqrt(var + eps);
    inv_std[r] = denom > 0.0 ? 1.0 / denom : 0.0;
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (xr[j] - mu) * inv_std[r];
  }
  return Tensor::record(x.shape(), std::move(out), {x},
                        [c, rows, inv_std = std::move(inv_std)](
                            const detail::Node& self, std::span<const double> g,
                            std::span<std::vector<double>* const> grads) {
                          const auto& y = self.data;
                          auto& gx = *grads[0];
                          for (std::size_t r = 0; r < rows; ++r) {
                            double g_mean = 0.0, gy_mean = 0.0;
                            for (std::size_t j = 0; j < c; ++j) {
                              g_mean += g[r * c + j];
                              gy_mean += g[r * c + j] * y[r * c + j];
                            }
                            g_mean /= static_cast<double>(c);
                            gy_mean /= static_cast<double>(c);
                            for (std::size_t j = 0; j < c; ++j) {
                              gx[r * c + j] +=
                                  inv_std[r] * (g[r * c + j] - g_mean - y[r * c + j] * gy_mean);
                            }
                          }
                        });
}

namespace {

void softmax_inplace(double* row, std::size_t n) {
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  for (std::size_t j = 0; j < n; ++j) row[j] -= mx;
  detail::exp_into(row, row, n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += row[j];
  for (std::size_t j = 0; j < n; ++j) row[j] /= total;
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = last_extent(x, "softmax_rows");
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r) softmax_inplace(out.data() + r * n, n);
  return Tensor::record(x.shape(), std::move(out), {x},
                        [n, rows](const detail::Node& self, std::span<const double> g,
                                  std::span<std::vector<double>* const> grads) {
                          const auto& y = self.data;
                          auto& gx = *grads[0];
                          for (std::size_t r = 0; r < rows; ++r) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                            for (std::size_t j = 0; j < n; ++j)
                              gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                          }
                        });
}

Tensor silu(const Tensor& x) {
  const auto xv = x.data();
  const std::size_t n = xv.size();
  // sigmoid from e = exp(-|x|), which never overflows.
  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) sig[i] = -std::abs(xv[i]);
  detail::exp_into(sig.data(), sig.data(), n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = sig[i];
    sig[i] = (xv[i] >= 0.0 ? 1.0 : e) / (1.0 + e);
    out[i] = xv[i] * sig[i];
  }
  return Tensor::record(x.shape(), std::move(out), {x},
                        [sig = std::move(sig)](const detail::Node& self, std::span<const double> g,
                                               std::span<std::vector<double>* const> grads) {
                          const auto& xv = self.inputs[0]->data;
                          auto& gx = *grads[0];
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double s = sig[i];
                            gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
                          }
                        });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t groups,
                 std::size_t heads) {
  require_matrix(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t rows = q.dim(0), c = q.dim(1);
  if (groups == 0 || rows % groups != 0) {
    throw ShapeError("attention: " + std::to_string(rows) + " rows not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (heads == 0 || c % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(c) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t tokens = rows / groups, dh = c / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto qv = q.data(), kv = k.data(), vv = v.data();

  // probs[(g*heads + h)*tokens*tokens + i*tokens + j]
  std::vector<double> probs(groups * heads * tokens * tokens);
  std::vector<double> out(rows * c, 0.0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + (gi * heads + h) * tokens * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        const double* qi = qv.data() + (gi * tokens + i) * c + h * dh;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double* kj = kv.data() + (gi * tokens + j) * c + h * dh;
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          p[i * tokens + j] = s * inv_sqrt;
        }
        softmax_inplace(p + i * tokens, tokens);
        double* oi = out.data() + (gi * tokens + i) * c + h * dh;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double pij = p[i * tokens + j];
          const double* vj = vv.data() + (gi * tokens + j) * c + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += pij * vj[d];
        }
      }
    }
  }
  return Tensor::record(
      {rows, c}, std::move(out), {q, k, v},
      [=, probs = std::move(probs)](const detail::Node& self, std::span<const double> g,
                                    std::span<std::vector<double>* const> grads) {
        const auto& qd = self.inputs[0]->data;
        const auto& kd = self.inputs[1]->data;
        const auto& vd = self.inputs[2]->data;
        std::vector<double> dp(tokens);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs.data() + (gi * heads + h) * tokens * tokens;
            for (std::size_t i = 0; i < tokens; ++i) {
              const double* gi_row = g.data() + (gi * tokens + i) * c + h * dh;
              // dP[i, j] = dO[i] . V[j]; dV[j] += P[i, j] dO[i]
              double dot = 0.0;
              for (std::size_t j = 0; j < tokens; ++j) {
                const std::size_t jr = (gi * tokens + j) * c + h * dh;
                double s = 0.0;
                for (std::size_t d = 0; d < dh; ++d) s += gi_row[d] * vd[jr + d];
                dp[j] = s;
                dot += s * p[i * tokens + j];
                if (grads[2]) {
                  for (std::size_t d = 0; d < dh; ++d) (*grads[2])[jr + d] += p[i * tokens + j] * gi_row[d];
                }
              }
              const std::size_t ir = (gi * tokens + i) * c + h * dh;
              for (std::size_t j = 0; j < tokens; ++j) {
                const double ds = p[i * tokens + j] * (dp[j] - dot) * inv_sqrt;
                const std::size_t jr = (gi * tokens + j) * c + h * dh;
                if (grads[0]) {
                  for (std::size_t d = 0; d < dh; ++d) (*grads[0])[ir + d] += ds * kd[jr + d];
                }
                if (grads[1]) {
                  for (std::size_t d = 0; d < dh; ++d) (*grads[1])[jr + d] += ds * qd[ir + d];
                }
              }
            }
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::record({}, {total}, {x},
                        [](const detail::Node&, std::span<const double> g,
                           std::span<std::vector<double>* const> grads) {
                          for (auto& gx : *grads[0]) gx += g[0];
                        });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double n = static_cast<double>(x.size());
  return Tensor::record({}, {total / n}, {x},
                        [n](const detail::Node&, std::span<const double> g,
                            std::span<std::vector<double>* const> grads) {
                          for (auto& gx : *grads[0]) gx += g[0] / n;
                        });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  return mean(square(sub(a, b)));
}

std::vector<Tensor> grad_of(const Tensor& loss, std::span<const Tensor> params) {
  if (loss.size() != 1) {
    throw ShapeError("grad_of: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  using detail::Node;
  // Collect every node reachable from the loss that participates in grad.
  std::vector<Node*> order;
  std::unordered_map<const Node*, std::vector<double>> grads;
  {
    std::vector<Node*> stack{loss.node().get()};
    std::unordered_map<const Node*, bool> seen;
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (seen[n] || !n->requires_grad) continue;
      seen[n] = true;
      order.push_back(n);
      for (auto& in : n->inputs) stack.push_back(in.get());
    }
  }
  // Inputs always carry a smaller sequence number than their consumers.
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
  if (!order.empty()) grads[order.front()] = std::vector<double>{1.0};

  for (Node* n : order) {
    if (n->inputs.empty()) continue;
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    std::vector<std::vector<double>*> slots(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& acc = grads[in];
      if (acc.empty()) acc.assign(in->data.size(), 0.0);
      slots[i] = &acc;
    }
    // grads may rehash above; look the output gradient up again.
    const auto& g = grads.at(n);
    n->backward(*n, g, slots);
    grads.erase(n);
  }

  std::vector<Tensor> result;
  result.reserve(params.size());
  for (const auto& p : params) {
    auto it = grads.find(p.node().get());
    if (it == grads.end() || it->second.empty()) {
      result.push_back(Tensor::zeros(p.shape()));
    } else {
      result.emplace_back(p.shape(), std::move(it->second));
    }
  }
  return result;
}

}  // namespace malab
