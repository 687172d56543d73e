#pragma once

#include <cstdint>
#include <vector>

#include "sda/detector/backbone.hpp"
#include "sda/detector/decode.hpp"
#include "sda/detector/head.hpp"
#include "sda/detector/loss.hpp"
#include "sda/detector/targets.hpp"
#include "sda/neck/neck.hpp"
#include "sda/xray/scene.hpp"

namespace sda::detector {

struct DetectorConfig {
  std::size_t num_classes = 3;
  std::size_t image_size = 128;
  BackboneConfig backbone;
  HeadConfig head;
  neck::NeckConfig neck{.n_levels = 3, .channels = 32};
  /// Bypass the neck call entirely instead of running it with toggles off.
  bool plain_pyramid = false;
  TargetConfig targets;
  LossConfig loss;
  DecodeConfig decode;

  /// Copies shared sizes (classes, channels) into the sub-configs and checks them.
  void normalize();
};

template <typename T>
struct ForwardResult {
  std::vector<LevelOutput<T>> outputs;
  std::vector<std::size_t> strides;
};

/// Backbone -> optional attention neck -> shared dense head.
template <typename T>
struct Detector {
  DetectorConfig cfg;
  BackboneParams<T> backbone;
  neck::NeckParams<T> neck;  // empty when every toggle is off
  HeadParams<T> head;

  /// Backbone, head and neck draw from independent streams of `seed`, so the
  /// toggles never change the backbone or head initialisation.
  static Detector init(DetectorConfig cfg, std::uint64_t seed);

  ForwardResult<T> forward(Tape<T>& tape, const Var<T>& images);
  Var<T> loss(Tape<T>& tape, const Var<T>& images, const std::vector<std::vector<GtBox>>& boxes,
              LossParts* parts = nullptr);
  /// Inference without gradient recording; one list per image.
  std::vector<std::vector<Detection>> predict(const Tensor<T>& images);

  void visit_params(const ParamVisitor<T>& fn);

  template <typename U>
  Detector<U> cast() const {
    return Detector<U>{cfg, backbone.template cast<U>(), neck.template cast<U>(), head.template cast<U>()};
  }
};

/// Stacks [3,H,W] images into [B,3,H,W].
template <typename T>
Tensor<T> stack_images(const std::vector<const xray::SceneRecord*>& records);

std::vector<GtBox> gt_boxes(const xray::SceneRecord& record);

}  // namespace sda::detector
