#pragma once

#include <vector>

#include "sda/detector/head.hpp"
#include "sda/detector/targets.hpp"

namespace sda::detector {

struct LossConfig {
  double size_weight = 0.1;
  double offset_weight = 1.0;
  double focal_beta = 2.0;
};

/// Sum over elements of |y - s|^beta * BCE(s, y) with s = sigmoid(logits).
/// Zero exactly where s == y; never negative.
template <typename T>
Var<T> quality_focal_sum(const Var<T>& logits, const Tensor<T>& target, double beta);

/// Sum over elements of mask * |pred - target|, mask broadcast over channels.
/// The subgradient at a zero residual is 0.
template <typename T>
Var<T> masked_l1_sum(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);

struct LossParts {
  double heatmap = 0, size = 0, offset = 0;
  std::size_t num_pos = 0;
};

/// (focal + w_size * L1(size) + w_offset * L1(offset)) / max(1, positives),
/// summed over levels. Images without objects add background focal terms only.
template <typename T>
Var<T> detection_loss(const std::vector<LevelOutput<T>>& outputs, const std::vector<LevelTargets<T>>& targets,
                      const LossConfig& cfg, LossParts* parts = nullptr);

}  // namespace sda::detector
