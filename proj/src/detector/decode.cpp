#include "sda/detector/decode.hpp"

#include <algorithm>
#include <cmath>

#include "sda/errors.hpp"
#include "sda/eval/iou.hpp"

namespace sda::detector {

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && eval::box_iou(k.bbox, d.bbox) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

template <typename T>
std::vector<Detection> decode_detections(const std::vector<LevelMaps<T>>& levels, const DecodeConfig& cfg) {
  if (!(cfg.score_thresh >= 0.0 && cfg.score_thresh <= 1.0)) {
    throw ValueError("decode_detections: score threshold must lie in [0, 1]");
  }
  std::vector<Detection> cand;
  for (const auto& lv : levels) {
    const auto& hm = lv.heatmap;
    if (hm.rank() != 3 || lv.size.rank() != 3 || lv.offset.rank() != 3 || lv.size.dim(0) != 2 ||
        lv.offset.dim(0) != 2 || lv.size.dim(1) != hm.dim(1) || lv.size.dim(2) != hm.dim(2) ||
        lv.offset.dim(1) != hm.dim(1) || lv.offset.dim(2) != hm.dim(2)) {
      throw ShapeError("decode_detections: heatmap " + shape_str(hm.shape()) + ", size " + shape_str(lv.size.shape()) +
                       ", offset " + shape_str(lv.offset.shape()));
    }
    const std::size_t K = hm.dim(0), H = hm.dim(1), W = hm.dim(2), HW = H * W;
    const double s = double(lv.stride);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const T v = hm[(k * H + y) * W + x];
          if (!(double(v) > cfg.score_thresh) || !std::isfinite(double(v))) continue;
          bool peak = true;
          for (std::size_t yy = y ? y - 1 : 0; peak && yy <= std::min(H - 1, y + 1); ++yy)
            for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(W - 1, x + 1); ++xx)
              if (hm[(k * H + yy) * W + xx] > v) {
                peak = false;
                break;
              }
          if (!peak) continue;
          const std::size_t i = y * W + x;
          const double w = std::max(double(lv.size[i]), 0.0) * s, h = std::max(double(lv.size[HW + i]), 0.0) * s;
          const double cx = (double(x) + double(lv.offset[i])) * s, cy = (double(y) + double(lv.offset[HW + i])) * s;
          double x0 = cx - w / 2, y0 = cy - h / 2, x1 = cx + w / 2, y1 = cy + h / 2;
          if (cfg.image_width > 0) {
            x0 = std::clamp(x0, 0.0, cfg.image_width);
            x1 = std::clamp(x1, 0.0, cfg.image_width);
          }
          if (cfg.image_height > 0) {
            y0 = std::clamp(y0, 0.0, cfg.image_height);
            y1 = std::clamp(y1, 0.0, cfg.image_height);
          }
          if (!(x1 > x0 && y1 > y0)) continue;
          cand.push_back({int(k), double(v), {x0, y0, x1 - x0, y1 - y0}});
        }
  }
  std::stable_sort(cand.begin(), cand.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  auto kept = nms(cand, cfg.nms_iou);
  if (kept.size() > cfg.max_dets) kept.resize(cfg.max_dets);
  return kept;
}

template std::vector<Detection> decode_detections<float>(const std::vector<LevelMaps<float>>&, const DecodeConfig&);
template std::vector<Detection> decode_detections<double>(const std::vector<LevelMaps<double>>&, const DecodeConfig&);

}  // namespace sda::detector
