#pragma once

#include "sda/xray/geometry.hpp"
#include "sda/xray/raster.hpp"

namespace sda::eval {

using xray::BBox;
using xray::Mask;

/// Continuous-area IoU of [x, y, w, h] boxes; 0 when the union is empty.
double box_iou(const BBox& a, const BBox& b);

struct MaskIou {
  double value = 0.0;
  bool both_empty = false;  // value is 0 by definition in that case
};

/// Pixel-count IoU. Throws ShapeError when the masks differ in extent.
MaskIou mask_iou(const Mask& a, const Mask& b);

}  // namespace sda::eval
