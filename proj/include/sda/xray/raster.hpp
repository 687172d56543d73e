#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sda/tensor/tensor.hpp"
#include "sda/xray/geometry.hpp"

namespace sda::xray {

/// Row-major binary mask.
struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v = true) { bits[y * width + x] = v ? 1 : 0; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Even-odd scanline fill. A pixel is set when its centre (x + 0.5, y + 0.5)
/// lies inside; crossings use half-open [y_min, y_max) edge spans, so the
/// left and top boundaries are inclusive. Zero-area polygons give an empty
/// mask and a warning.
Mask rasterize_mask(const Polygon& polygon, std::size_t height, std::size_t width);

Mask mask_union(std::span<const Mask> masks, std::size_t height, std::size_t width);
std::size_t intersection_count(const Mask& a, const Mask& b);

/// A placed item: geometry plus per-channel transmittance in (0, 1].
struct Item {
  int class_id = 0;
  Polygon polygon;
  std::array<double, 3> attenuation{1.0, 1.0, 1.0};
};

/// out(c, y, x) = bg(c, y, x) * prod over covering items of attenuation(c).
/// Background must be [3, H, W] with values in [0, 1].
Tensor<float> composite(const Tensor<float>& background, std::span<const Item> items);

}  // namespace sda::xray
