#include "sda/xray/raster.hpp"

#include <algorithm>
#include <cmath>

#include "sda/errors.hpp"
#include "sda/log.hpp"

namespace sda::xray {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask rasterize_mask(const Polygon& polygon, std::size_t height, std::size_t width) {
  Mask mask(height, width);
  if (polygon.size() < 3 || polygon_area(polygon) == 0.0) {
    warn("rasterize_mask: degenerate polygon with " + std::to_string(polygon.size()) + " vertices, empty mask");
    return mask;
  }
  const std::size_t n = polygon.size();
  std::vector<double> xs;
  for (std::size_t row = 0; row < height; ++row) {
    const double yc = double(row) + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = polygon[i];
      const Point& b = polygon[(i + 1) % n];
      if ((a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y)) {
        xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Centres xc with xs[k] <= xc < xs[k+1].
      const double lo = std::ceil(xs[k] - 0.5);
      const double hi = std::ceil(xs[k + 1] - 0.5);
      const long c0 = std::max(0L, static_cast<long>(lo));
      const long c1 = std::min(static_cast<long>(width), static_cast<long>(hi));
      for (long c = c0; c < c1; ++c) mask.set(row, static_cast<std::size_t>(c));
    }
  }
  return mask;
}

Mask mask_union(std::span<const Mask> masks, std::size_t height, std::size_t width) {
  Mask out(height, width);
  for (const auto& m : masks) {
    if (m.height != height || m.width != width) throw ShapeError("mask_union: mask extents differ");
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] |= m.bits[i];
  }
  return out;
}

std::size_t intersection_count(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("intersection_count: mask extents differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += a.bits[i] & b.bits[i];
  return n;
}

Tensor<float> composite(const Tensor<float>& background, std::span<const Item> items) {
  if (background.rank() != 3 || background.dim(0) != 3) {
    throw ShapeError("composite: background must be [3,H,W], got " + shape_str(background.shape()));
  }
  const std::size_t H = background.dim(1), W = background.dim(2);
  // Multiplying in a canonical order keeps the result bitwise independent of
  // the caller's item order.
  std::vector<const Item*> order;
  for (const auto& item : items) order.push_back(&item);
  std::sort(order.begin(), order.end(), [](const Item* a, const Item* b) {
    if (a->attenuation != b->attenuation) return a->attenuation < b->attenuation;
    return std::lexicographical_compare(a->polygon.begin(), a->polygon.end(), b->polygon.begin(), b->polygon.end(),
                                        [](const Point& u, const Point& v) {
                                          return u.x != v.x ? u.x < v.x : u.y < v.y;
                                        });
  });
  std::vector<double> trans(3 * H * W, 1.0);
  for (const Item* ip : order) {
    const Item& item = *ip;
    for (double a : item.attenuation) {
      if (!(a > 0.0 && a <= 1.0)) throw ValueError("composite: attenuation must lie in (0, 1]");
    }
    const Mask m = rasterize_mask(item.polygon, H, W);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < H * W; ++p)
        if (m.bits[p]) trans[c * H * W + p] *= item.attenuation[c];
  }
  Tensor<float> out(background.shape());
  auto bg = background.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = static_cast<float>(std::clamp(double(bg[i]) * trans[i], 0.0, 1.0));
  }
  return out;
}

}  // namespace sda::xray
