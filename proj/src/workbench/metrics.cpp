#include "malab/workbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "malab/errors.hpp"

namespace malab::workbench {

double w2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("w2_1d: sizes differ or are zero");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double sliced_w2(const Tensor& a, const Tensor& b, std::size_t projections, std::uint64_t seed) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("sliced_w2: expected point sets [..., d]");
  const std::size_t d = a.shape().back();
  if (b.shape().back() != d) {
    throw ShapeError("sliced_w2: dimension mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.size() / d;
  if (b.size() / d != n) {
    throw std::invalid_argument("sliced_w2: " + std::to_string(n) + " points vs " + std::to_string(b.size() / d));
  }
  if (n < 2) throw std::invalid_argument("sliced_w2: need at least 2 points");
  if (projections == 0) throw std::invalid_argument("sliced_w2: need at least one projection");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> dir(d), pa(n), pb(n);
  const auto da = a.data(), db = b.data();
  double total = 0.0;
  for (std::size_t p = 0; p < projections; ++p) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : dir) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;
    for (std::size_t i = 0; i < n; ++i) {
      double sa = 0.0, sb = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        sa += da[i * d + j] * dir[j];
        sb += db[i * d + j] * dir[j];
      }
      pa[i] = sa;
      pb[i] = sb;
    }
    total += w2_1d(pa, pb);
  }
  return total / static_cast<double>(projections);
}

namespace {

double channel_energy(std::span<const double> f, std::size_t h, std::size_t w, std::size_t k, std::size_t ch) {
  auto at = [&](std::size_t i, std::size_t j) { return f[(i * w + j) * k + ch]; };
  const double count = static_cast<double>(h * w);
  double mean = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) mean += at(i, j);
  mean /= count;
  double var = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) var += (at(i, j) - mean) * (at(i, j) - mean);
  var /= count;
  if (var == 0.0) return 0.0;
  double lap = 0.0;
  for (std::size_t i = 1; i + 1 < h; ++i) {
    for (std::size_t j = 1; j + 1 < w; ++j) {
      const double l = at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4.0 * at(i, j);
      lap += l * l;
    }
  }
  return lap / static_cast<double>((h - 2) * (w - 2)) / var;
}

double field_energy(std::span<const double> f, std::size_t h, std::size_t w, std::size_t k) {
  if (h < 3 || w < 3) {
    throw std::invalid_argument("detail_energy: grid " + std::to_string(h) + "x" + std::to_string(w) +
                                " is smaller than 3x3");
  }
  double total = 0.0;
  for (std::size_t ch = 0; ch < k; ++ch) total += channel_energy(f, h, w, k, ch);
  return total / static_cast<double>(k);
}

}  // namespace

double detail_energy(const Tensor& field) {
  if (field.rank() != 2 && field.rank() != 3) {
    throw ShapeError("detail_energy: expected [H, W] or [H, W, K], got " + shape_str(field.shape()));
  }
  const std::size_t k = field.rank() == 3 ? field.dim(2) : 1;
  return field_energy(field.data(), field.dim(0), field.dim(1), k);
}

double sample_detail_energy(const Tensor& samples, std::size_t grid_h, std::size_t grid_w) {
  if (samples.rank() != 3 || samples.dim(1) != grid_h * grid_w) {
    throw ShapeError("sample_detail_energy: expected [n, " + std::to_string(grid_h * grid_w) + ", K], got " +
                     shape_str(samples.shape()));
  }
  const std::size_t n = samples.dim(0), k = samples.dim(2), per = grid_h * grid_w * k;
  if (n == 0) throw std::invalid_argument("sample_detail_energy: no samples");
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) total += field_energy(samples.data().subspan(s * per, per), grid_h, grid_w, k);
  return total / static_cast<double>(n);
}

}  // namespace malab::workbench
