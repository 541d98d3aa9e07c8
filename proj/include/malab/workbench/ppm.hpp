#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "malab/numerics/tensor.hpp"

namespace malab::workbench {

// RGB image with channel values in [0, 1], row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> rgb;  // 3 * width * height

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 1.0);
  void set(std::size_t x, std::size_t y, const std::array<double, 3>& color);
  std::array<double, 3> get(std::size_t x, std::size_t y) const;
};

// round(255 v) with halves away from zero; std::invalid_argument outside [0, 1].
std::uint8_t quantize(double v);

// Binary P6, maxval 255.
std::string encode_ppm(const Image& image);
void write_ppm(const Image& image, const std::string& path);

struct ScatterStyle {
  std::size_t size = 96;   // tile edge in pixels
  double extent = 1.5;     // tile covers [-extent, extent]^2
  std::array<double, 3> color{0.1, 0.2, 0.6};
};

// Points [n, ..., 2] (leading axes flattened) drawn as single pixels on a
// white tile. Points outside the extent are dropped.
Image scatter_tile(const Tensor& points, const ScatterStyle& style = {});

// Tiles of equal size laid out row-major, `columns` per row, separated by a
// gray border of `gap` pixels.
Image tile_grid(const std::vector<Image>& tiles, std::size_t columns, std::size_t gap = 2);

}  // namespace malab::workbench
