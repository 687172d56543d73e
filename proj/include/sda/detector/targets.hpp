#pragma once

#include <array>
#include <vector>

#include "sda/tensor/tensor.hpp"
#include "sda/xray/geometry.hpp"

namespace sda::detector {

struct GtBox {
  int class_id = 0;
  xray::BBox bbox{};  // [x, y, w, h] in image pixels
};

struct TargetConfig {
  std::array<std::size_t, 3> strides{4, 8, 16};
  std::array<double, 2> area_limits{32.0 * 32.0, 96.0 * 96.0};  // upper bounds of levels 0 and 1
  double radius_fraction = 0.25;  // splat radius as a share of the shorter side, in cells
  std::size_t min_radius = 1;
};

/// Dense training targets for one level.
template <typename T>
struct LevelTargets {
  Tensor<T> heatmap;  // [B, K, H, W], Gaussian splats, 1 at each centre cell
  Tensor<T> size;     // [B, 2, H, W], (w, h) / stride at centre cells
  Tensor<T> offset;   // [B, 2, H, W], centre / stride - cell index
  Tensor<T> mask;     // [B, 1, H, W], 1 at centre cells
  std::size_t num_pos = 0;
};

/// Index of the level an object of this box belongs to.
std::size_t assign_level(const xray::BBox& box, const TargetConfig& cfg);

std::size_t splat_radius(const xray::BBox& box, std::size_t stride, const TargetConfig& cfg);

/// `boxes[b]` are the objects of image b; `extents[l]` is the (H, W) of level l.
template <typename T>
std::vector<LevelTargets<T>> render_targets(const std::vector<std::vector<GtBox>>& boxes,
                                            const std::vector<std::array<std::size_t, 2>>& extents,
                                            std::size_t num_classes, const TargetConfig& cfg);

}  // namespace sda::detector
