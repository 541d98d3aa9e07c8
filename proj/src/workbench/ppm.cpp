#include "malab/workbench/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "malab/errors.hpp"

namespace malab::workbench {

Image::Image(std::size_t w, std::size_t h, double fill) : width(w), height(h), rgb(3 * w * h, fill) {}

void Image::set(std::size_t x, std::size_t y, const std::array<double, 3>& color) {
  if (x >= width || y >= height) throw std::out_of_range("pixel outside image");
  for (std::size_t ch = 0; ch < 3; ++ch) rgb[3 * (y * width + x) + ch] = color[ch];
}

std::array<double, 3> Image::get(std::size_t x, std::size_t y) const {
  if (x >= width || y >= height) throw std::out_of_range("pixel outside image");
  const double* p = &rgb[3 * (y * width + x)];
  return {p[0], p[1], p[2]};
}

std::uint8_t quantize(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image value " + std::to_string(v) + " outside [0, 1]");
  return static_cast<std::uint8_t>(std::round(v * 255.0));
}

std::string encode_ppm(const Image& image) {
  if (image.width == 0 || image.height == 0) throw std::invalid_argument("empty image");
  if (image.rgb.size() != 3 * image.width * image.height) throw std::invalid_argument("image buffer size mismatch");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.rgb.size());
  for (double v : image.rgb) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

void write_ppm(const Image& image, const std::string& path) {
  const std::string bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Image scatter_tile(const Tensor& points, const ScatterStyle& style) {
  if (points.rank() < 2 || points.shape().back() != 2) {
    throw ShapeError("scatter_tile: expected [..., 2], got " + shape_str(points.shape()));
  }
  if (style.size < 2 || !(style.extent > 0.0)) throw std::invalid_argument("scatter_tile: bad style");
  Image tile(style.size, style.size);
  const auto data = points.data();
  const double scale = (style.size - 1) / (2.0 * style.extent);
  for (std::size_t i = 0; i + 1 < data.size(); i += 2) {
    const double px = std::round((data[i] + style.extent) * scale);
    const double py = std::round((style.extent - data[i + 1]) * scale);
    if (px < 0 || py < 0 || px >= style.size || py >= style.size) continue;
    tile.set(static_cast<std::size_t>(px), static_cast<std::size_t>(py), style.color);
  }
  return tile;
}

Image tile_grid(const std::vector<Image>& tiles, std::size_t columns, std::size_t gap) {
  if (tiles.empty() || columns == 0) throw std::invalid_argument("tile_grid: no tiles");
  const std::size_t tw = tiles.front().width, th = tiles.front().height;
  for (const auto& t : tiles) {
    if (t.width != tw || t.height != th) throw std::invalid_argument("tile_grid: tiles differ in size");
  }
  columns = std::min(columns, tiles.size());
  const std::size_t rows = (tiles.size() + columns - 1) / columns;
  Image grid(gap + columns * (tw + gap), gap + rows * (th + gap), 0.5);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::size_t ox = gap + (i % columns) * (tw + gap), oy = gap + (i / columns) * (th + gap);
    for (std::size_t y = 0; y < th; ++y) {
      for (std::size_t x = 0; x < tw; ++x) grid.set(ox + x, oy + y, tiles[i].get(x, y));
    }
  }
  return grid;
}

}  // namespace malab::workbench
