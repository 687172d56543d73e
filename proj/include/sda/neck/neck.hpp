#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sda/tensor/ops.hpp"

namespace sda::neck {

/// Ordered feature maps {X_1..X_n}, finest first, sharing batch and channels.
template <typename T>
struct FeaturePyramid {
  std::vector<Var<T>> levels;
  std::vector<std::size_t> strides;

  std::size_t size() const { return levels.size(); }
  /// Throws ShapeError/UsageError when the structural invariants do not hold.
  void validate() const;
};

/// Channel attention: GAP -> squeeze FC (C -> C/r) -> ReLU -> one FC per layer
/// (C/r -> C) -> softmax across layers.
template <typename T>
struct ScaParams {
  Parameter<T> squeeze_weight;  // [C, C/r]
  Parameter<T> squeeze_bias;    // [1, C/r]
  std::vector<Parameter<T>> branch_weight;  // n x [C/r, C]
  std::vector<Parameter<T>> branch_bias;    // n x [1, C]
};

/// Spatial attention: [avg; max] channel descriptors -> one k x k conv per
/// layer -> softmax across layers per pixel.
template <typename T>
struct SsaParams {
  std::vector<Parameter<T>> branch_weight;  // n x [1, 2, k, k]
  std::vector<Parameter<T>> branch_bias;    // n x [1]
};

/// Global-context refinement: softmax spatial pooling, layer-normalised
/// bottleneck transform, broadcast residual add.
template <typename T>
struct DrParams {
  Parameter<T> key_weight;   // [1, C, 1, 1]
  Parameter<T> down_weight;  // [C/r, C, 1, 1]
  Parameter<T> down_bias;    // [C/r]
  Parameter<T> norm_scale;   // [C/r, 1, 1]
  Parameter<T> norm_shift;   // [C/r, 1, 1]
  Parameter<T> up_weight;    // [C, C/r, 1, 1], zero at init
  Parameter<T> up_bias;      // [C]
};

template <typename T>
struct LevelParams {
  std::optional<ScaParams<T>> sca;
  std::optional<SsaParams<T>> ssa;
  std::optional<DrParams<T>> dr;
};

struct NeckConfig {
  std::size_t n_levels = 3;
  std::size_t channels = 64;
  std::size_t sca_ratio = 2;
  std::size_t ssa_kernel = 7;
  std::size_t dr_ratio = 4;
  bool use_sca = true;
  bool use_ssa = true;
  bool use_dr = true;
  /// One parameter set reused by every target level instead of one per level.
  bool share_weights = false;

  bool any_enabled() const { return use_sca || use_ssa || use_dr; }
  void validate() const;
};

/// The five toggle rows of the ablation table, in table order.
struct AblationRow {
  std::string name;
  bool use_sca, use_ssa, use_dr;
};
const std::vector<AblationRow>& ablation_rows();

template <typename T>
struct NeckParams {
  std::vector<LevelParams<T>> levels;  // n_levels entries, or one when shared

  template <typename U>
  NeckParams<U> cast() const;
};

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Parameter<T>& p)>;

/// Kaiming-uniform weights, zero biases, unit norm scale, zero DR up-projection.
template <typename T>
NeckParams<T> init_neck_params(const NeckConfig& cfg, std::mt19937_64& rng);

/// Enumerates parameters as "neck.level{i}.{sca|ssa|dr}.*" in a fixed order.
template <typename T>
void visit_params(NeckParams<T>& params, const ParamVisitor<T>& fn);

/// Every level resized to the extent of `target`, in level order.
template <typename T>
std::vector<Var<T>> resize_to_level(const FeaturePyramid<T>& p, std::size_t target);

/// X-hat = sum over levels after resizing to level `target`.
template <typename T>
Var<T> fuse_base(const FeaturePyramid<T>& p, std::size_t target);

template <typename T>
struct AttentionOutput {
  Var<T> fused;    // V_C or V_S
  Var<T> weights;  // [B,n,C] for SCA, [B,n,H,W] for SSA
};

template <typename T>
AttentionOutput<T> sca_forward(std::span<const Var<T>> resized, ScaParams<T>& params);
template <typename T>
AttentionOutput<T> sca_forward(std::span<const Var<T>> resized, const Var<T>& base, ScaParams<T>& params);

template <typename T>
AttentionOutput<T> ssa_forward(std::span<const Var<T>> resized, SsaParams<T>& params);
template <typename T>
AttentionOutput<T> ssa_forward(std::span<const Var<T>> resized, const Var<T>& base, SsaParams<T>& params);

template <typename T>
Var<T> dr_forward(const Var<T>& v, DrParams<T>& params);

/// Per level i: E_i from the enabled attention modules (summed when both),
/// R_i = DR(E_i) when enabled, output_i = X_i + R_i. With every toggle off the
/// input pyramid is returned unchanged.
template <typename T>
FeaturePyramid<T> neck_forward(const FeaturePyramid<T>& p, NeckParams<T>& params, const NeckConfig& cfg);


template <typename T>
template <typename U>
NeckParams<U> NeckParams<T>::cast() const {
  auto cast_all = [](const std::vector<Parameter<T>>& v) {
    std::vector<Parameter<U>> out;
    for (const auto& p : v) out.push_back(p.template cast<U>());
    return out;
  };
  NeckParams<U> out;
  for (const auto& lp : levels) {
    LevelParams<U> l;
    if (lp.sca) {
      l.sca = ScaParams<U>{lp.sca->squeeze_weight.template cast<U>(), lp.sca->squeeze_bias.template cast<U>(),
                           cast_all(lp.sca->branch_weight), cast_all(lp.sca->branch_bias)};
    }
    if (lp.ssa) l.ssa = SsaParams<U>{cast_all(lp.ssa->branch_weight), cast_all(lp.ssa->branch_bias)};
    if (lp.dr) {
      const auto& d = *lp.dr;
      l.dr = DrParams<U>{d.key_weight.template cast<U>(),
                         d.down_weight.template cast<U>(), d.down_bias.template cast<U>(),
                         d.norm_scale.template cast<U>(),  d.norm_shift.template cast<U>(),
                         d.up_weight.template cast<U>(),   d.up_bias.template cast<U>()};
    }
    out.levels.push_back(std::move(l));
  }
  return out;
}

}  // namespace sda::neck
