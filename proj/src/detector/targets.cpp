#include "sda/detector/targets.hpp"

#include <algorithm>
#include <cmath>

#include "sda/errors.hpp"

namespace sda::detector {

std::size_t assign_level(const xray::BBox& box, const TargetConfig& cfg) {
  const double area = box[2] * box[3];
  if (area < cfg.area_limits[0]) return 0;
  if (area < cfg.area_limits[1]) return 1;
  return 2;
}

std::size_t splat_radius(const xray::BBox& box, std::size_t stride, const TargetConfig& cfg) {
  const double shorter = std::min(box[2], box[3]) / double(stride);
  return std::max(cfg.min_radius, static_cast<std::size_t>(std::floor(cfg.radius_fraction * shorter)));
}

template <typename T>
std::vector<LevelTargets<T>> render_targets(const std::vector<std::vector<GtBox>>& boxes,
                                            const std::vector<std::array<std::size_t, 2>>& extents,
                                            std::size_t num_classes, const TargetConfig& cfg) {
  if (extents.size() != cfg.strides.size()) throw ShapeError("render_targets: one extent per level required");
  const std::size_t B = boxes.size(), K = num_classes;
  std::vector<LevelTargets<T>> out;
  for (const auto& [H, W] : extents) {
    LevelTargets<T> t;
    t.heatmap = Tensor<T>(Shape{B, K, H, W});
    t.size = Tensor<T>(Shape{B, 2, H, W});
    t.offset = Tensor<T>(Shape{B, 2, H, W});
    t.mask = Tensor<T>(Shape{B, 1, H, W});
    out.push_back(std::move(t));
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (const auto& g : boxes[b]) {
      if (g.class_id < 0 || std::size_t(g.class_id) >= K) {
        throw ValueError("render_targets: class id " + std::to_string(g.class_id) + " out of range");
      }
      if (!(g.bbox[2] > 0 && g.bbox[3] > 0)) continue;
      const std::size_t l = assign_level(g.bbox, cfg);
      const double stride = double(cfg.strides[l]);
      auto& t = out[l];
      const auto [H, W] = extents[l];
      const double cx = (g.bbox[0] + g.bbox[2] / 2) / stride, cy = (g.bbox[1] + g.bbox[3] / 2) / stride;
      const long ix = std::clamp(long(std::floor(cx)), 0L, long(W) - 1);
      const long iy = std::clamp(long(std::floor(cy)), 0L, long(H) - 1);
      const long r = long(splat_radius(g.bbox, cfg.strides[l], cfg));
      const double sigma = double(2 * r + 1) / 6.0;
      const std::size_t k = std::size_t(g.class_id);
      for (long y = std::max(0L, iy - r); y <= std::min(long(H) - 1, iy + r); ++y)
        for (long x = std::max(0L, ix - r); x <= std::min(long(W) - 1, ix + r); ++x) {
          const double d2 = double((x - ix) * (x - ix) + (y - iy) * (y - iy));
          T& h = t.heatmap.at(b, k, std::size_t(y), std::size_t(x));
          h = std::max(h, static_cast<T>(std::exp(-d2 / (2 * sigma * sigma))));
        }
      t.size.at(b, 0, std::size_t(iy), std::size_t(ix)) = static_cast<T>(g.bbox[2] / stride);
      t.size.at(b, 1, std::size_t(iy), std::size_t(ix)) = static_cast<T>(g.bbox[3] / stride);
      t.offset.at(b, 0, std::size_t(iy), std::size_t(ix)) = static_cast<T>(cx - double(ix));
      t.offset.at(b, 1, std::size_t(iy), std::size_t(ix)) = static_cast<T>(cy - double(iy));
      if (t.mask.at(b, 0, std::size_t(iy), std::size_t(ix)) == T{0}) ++t.num_pos;
      t.mask.at(b, 0, std::size_t(iy), std::size_t(ix)) = T{1};
    }
  }
  return out;
}

template std::vector<LevelTargets<float>> render_targets<float>(const std::vector<std::vector<GtBox>>&,
                                                                const std::vector<std::array<std::size_t, 2>>&,
                                                                std::size_t, const TargetConfig&);
template std::vector<LevelTargets<double>> render_targets<double>(const std::vector<std::vector<GtBox>>&,
                                                                  const std::vector<std::array<std::size_t, 2>>&,
                                                                  std::size_t, const TargetConfig&);

}  // namespace sda::detector
