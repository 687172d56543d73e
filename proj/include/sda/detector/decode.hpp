#pragma once

#include <array>
#include <vector>

#include "sda/tensor/tensor.hpp"
#include "sda/xray/geometry.hpp"

namespace sda::detector {

struct Detection {
  int class_id = 0;
  double score = 0.0;
  xray::BBox bbox{};  // [x, y, w, h], image pixels
};

/// Plain tensors of one level for a single image: heatmap [K,H,W] already
/// passed through the sigmoid, size and offset [2,H,W].
template <typename T>
struct LevelMaps {
  Tensor<T> heatmap;
  Tensor<T> size;
  Tensor<T> offset;
  std::size_t stride = 1;
};

struct DecodeConfig {
  double score_thresh = 0.05;
  std::size_t max_dets = 100;
  double nms_iou = 0.6;
  double image_width = 0, image_height = 0;  // boxes are clipped when positive
};

/// Greedy class-wise suppression of boxes with IoU >= iou_thresh against a kept
/// box of the same class. Input must be sorted by score descending.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);

/// Local maxima (3x3, ties kept) above the threshold, decoded to boxes, NMS,
/// sorted by score descending and truncated to max_dets.
template <typename T>
std::vector<Detection> decode_detections(const std::vector<LevelMaps<T>>& levels, const DecodeConfig& cfg);

}  // namespace sda::detector
