#pragma once

#include <vector>

#include "sda/detector/backbone.hpp"

namespace sda::detector {

struct HeadConfig {
  std::size_t num_classes = 3;
  std::size_t hidden = 32;
  double heatmap_bias = -2.19;  // sigmoid prior of about 0.1
  double out_weight_bound = 0.01;  // U(-b, b) for the output conv
};

/// One conv stack shared across levels.
template <typename T>
struct HeadParams {
  ConvLayer<T> hidden;  // 3x3, C -> hidden
  ConvLayer<T> out;     // 1x1, hidden -> K + 4

  template <typename U>
  HeadParams<U> cast() const {
    return {hidden.template cast<U>(), out.template cast<U>()};
  }
};

/// Raw per-level outputs; the heatmap is in logit space.
template <typename T>
struct LevelOutput {
  Var<T> heatmap;  // [B, K, H, W]
  Var<T> size;     // [B, 2, H, W], box (w, h) in stride units
  Var<T> offset;   // [B, 2, H, W], centre offset within the cell
};

template <typename T>
HeadParams<T> init_head(const HeadConfig& cfg, std::size_t channels, std::mt19937_64& rng);

template <typename T>
void visit_params(HeadParams<T>& p, const ParamVisitor<T>& fn);

template <typename T>
std::vector<LevelOutput<T>> head_forward(Tape<T>& tape, HeadParams<T>& p, const neck::FeaturePyramid<T>& pyramid);

}  // namespace sda::detector
