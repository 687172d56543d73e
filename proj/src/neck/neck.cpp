#include "sda/neck/neck.hpp"

#include "sda/errors.hpp"
#include "sda/tensor/init.hpp"

namespace sda::neck {

template <typename T>
void FeaturePyramid<T>::validate() const {
  if (levels.empty()) throw UsageError("feature pyramid has no levels");
  if (strides.size() != levels.size()) throw UsageError("feature pyramid: one stride per level required");
  const Shape& s0 = levels[0].shape();
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const Shape& s = levels[i].shape();
    if (s.size() != 4 || s[0] != s0[0] || s[1] != s0[1]) {
      throw ShapeError("feature pyramid level " + std::to_string(i) + " has shape " + shape_str(s) +
                       ", expected batch/channels of " + shape_str(s0));
    }
    if (i > 0 && strides[i] <= strides[i - 1]) throw UsageError("feature pyramid strides must ascend");
    if (levels[i].tape() != levels[0].tape()) throw UsageError("feature pyramid levels live on different tapes");
  }
}

void NeckConfig::validate() const {
  if (n_levels == 0) throw ConfigError("neck: n_levels must be >= 1");
  if (channels == 0 || sca_ratio == 0 || dr_ratio == 0) throw ConfigError("neck: ratios and channels must be >= 1");
  if (use_sca && channels % sca_ratio != 0) throw ConfigError("neck: sca ratio must divide channels");
  if (use_dr && channels % dr_ratio != 0) throw ConfigError("neck: dr ratio must divide channels");
  if (use_ssa && ssa_kernel % 2 == 0) throw ConfigError("neck: ssa kernel must be odd");
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {"none", false, false, false},
      {"sca", true, false, false},
      {"ssa", false, true, false},
      {"sca+ssa", true, true, false},
      {"sca+ssa+dr", true, true, true},
  };
  return rows;
}

template <typename T>
NeckParams<T> init_neck_params(const NeckConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t C = cfg.channels, n = cfg.n_levels;
  NeckParams<T> out;
  const std::size_t sets = cfg.share_weights ? 1 : n;
  for (std::size_t l = 0; l < sets; ++l) {
    LevelParams<T> lp;
    if (cfg.use_sca) {
      const std::size_t hidden = C / cfg.sca_ratio;
      ScaParams<T> sca;
      sca.squeeze_weight = Parameter<T>(kaiming_uniform<T>({C, hidden}, C, rng));
      sca.squeeze_bias = Parameter<T>(Tensor<T>(Shape{1, hidden}));
      for (std::size_t i = 0; i < n; ++i) {
        sca.branch_weight.emplace_back(kaiming_uniform<T>({hidden, C}, hidden, rng));
        sca.branch_bias.emplace_back(Tensor<T>(Shape{1, C}));
      }
      lp.sca = std::move(sca);
    }
    if (cfg.use_ssa) {
      const std::size_t k = cfg.ssa_kernel;
      SsaParams<T> ssa;
      for (std::size_t i = 0; i < n; ++i) {
        ssa.branch_weight.emplace_back(kaiming_uniform<T>({1, 2, k, k}, 2 * k * k, rng));
        ssa.branch_bias.emplace_back(Tensor<T>(Shape{1}));
      }
      lp.ssa = std::move(ssa);
    }
    if (cfg.use_dr) {
      const std::size_t hidden = C / cfg.dr_ratio;
      DrParams<T> dr;
      dr.key_weight = Parameter<T>(kaiming_uniform<T>({1, C, 1, 1}, C, rng));
      dr.down_weight = Parameter<T>(kaiming_uniform<T>({hidden, C, 1, 1}, C, rng));
      dr.down_bias = Parameter<T>(Tensor<T>(Shape{hidden}));
      dr.norm_scale = Parameter<T>(Tensor<T>(Shape{hidden, 1, 1}, T{1}));
      dr.norm_shift = Parameter<T>(Tensor<T>(Shape{hidden, 1, 1}));
      dr.up_weight = Parameter<T>(Tensor<T>(Shape{C, hidden, 1, 1}));
      dr.up_bias = Parameter<T>(Tensor<T>(Shape{C}));
      lp.dr = std::move(dr);
    }
    out.levels.push_back(std::move(lp));
  }
  return out;
}

template <typename T>
void visit_params(NeckParams<T>& params, const ParamVisitor<T>& fn) {
  for (std::size_t l = 0; l < params.levels.size(); ++l) {
    auto& lp = params.levels[l];
    const std::string prefix = "neck.level" + std::to_string(l) + ".";
    if (lp.sca) {
      fn(prefix + "sca.squeeze.weight", lp.sca->squeeze_weight);
      fn(prefix + "sca.squeeze.bias", lp.sca->squeeze_bias);
      for (std::size_t i = 0; i < lp.sca->branch_weight.size(); ++i) {
        fn(prefix + "sca.branch" + std::to_string(i) + ".weight", lp.sca->branch_weight[i]);
        fn(prefix + "sca.branch" + std::to_string(i) + ".bias", lp.sca->branch_bias[i]);
      }
    }
    if (lp.ssa) {
      for (std::size_t i = 0; i < lp.ssa->branch_weight.size(); ++i) {
        fn(prefix + "ssa.branch" + std::to_string(i) + ".weight", lp.ssa->branch_weight[i]);
        fn(prefix + "ssa.branch" + std::to_string(i) + ".bias", lp.ssa->branch_bias[i]);
      }
    }
    if (lp.dr) {
      fn(prefix + "dr.context_key.weight", lp.dr->key_weight);
      fn(prefix + "dr.transform_down.weight", lp.dr->down_weight);
      fn(prefix + "dr.transform_down.bias", lp.dr->down_bias);
      fn(prefix + "dr.norm.scale", lp.dr->norm_scale);
      fn(prefix + "dr.norm.shift", lp.dr->norm_shift);
      fn(prefix + "dr.transform_up.weight", lp.dr->up_weight);
      fn(prefix + "dr.transform_up.bias", lp.dr->up_bias);
    }
  }
}

template <typename T>
std::vector<Var<T>> resize_to_level(const FeaturePyramid<T>& p, std::size_t target) {
  p.validate();
  if (target >= p.size()) throw UsageError("target level " + std::to_string(target) + " out of range");
  const Shape& s = p.levels[target].shape();
  std::vector<Var<T>> out;
  out.reserve(p.size());
  for (const auto& x : p.levels) out.push_back(bilinear_resize(x, s[2], s[3]));
  return out;
}

namespace {

template <typename T>
Var<T> sum_all(std::span<const Var<T>> xs) {
  Var<T> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

template <typename T>
void check_same_shape(std::span<const Var<T>> xs, const char* who) {
  if (xs.empty()) throw UsageError(std::string(who) + ": no inputs");
  for (const auto& x : xs) {
    if (x.shape() != xs[0].shape() || x.shape().size() != 4) {
      throw ShapeError(std::string(who) + ": inputs must share one [B,C,H,W] shape, got " + shape_str(x.shape()) +
                       " and " + shape_str(xs[0].shape()));
    }
  }
}

// Stacks per-layer [B, ...] tensors into [B, n, ...] and normalises across layers.
template <typename T>
Var<T> softmax_across_layers(const std::vector<Var<T>>& logits, const Shape& per_layer) {
  std::vector<Var<T>> parts;
  Shape expanded = per_layer;
  expanded.insert(expanded.begin() + 1, 1);
  for (const auto& l : logits) parts.push_back(reshape(l, expanded));
  return softmax(concat<T>(parts, 1), 1);
}

}  // namespace

template <typename T>
Var<T> fuse_base(const FeaturePyramid<T>& p, std::size_t target) {
  auto resized = resize_to_level(p, target);
  return sum_all<T>(resized);
}

template <typename T>
AttentionOutput<T> sca_forward(std::span<const Var<T>> resized, ScaParams<T>& params) {
  check_same_shape(resized, "sca_forward");
  return sca_forward(resized, sum_all(resized), params);
}

template <typename T>
AttentionOutput<T> sca_forward(std::span<const Var<T>> resized, const Var<T>& base, ScaParams<T>& params) {
  check_same_shape(resized, "sca_forward");
  const std::size_t n = resized.size();
  if (params.branch_weight.size() != n || params.branch_bias.size() != n) {
    throw ConfigError("sca_forward: " + std::to_string(params.branch_weight.size()) + " branches for " +
                      std::to_string(n) + " layers");
  }
  auto& tape = *base.tape();
  const std::size_t B = base.shape()[0], C = base.shape()[1];
  auto s = reshape(global_avg_pool(base), {B, C});
  auto z = relu(add(matmul(s, tape.param(params.squeeze_weight)), tape.param(params.squeeze_bias)));
  std::vector<Var<T>> logits;
  for (std::size_t i = 0; i < n; ++i) {
    logits.push_back(add(matmul(z, tape.param(params.branch_weight[i])), tape.param(params.branch_bias[i])));
  }
  auto weights = softmax_across_layers(logits, {B, C});  // [B,n,C]
  Var<T> fused;
  for (std::size_t i = 0; i < n; ++i) {
    auto w = reshape(slice(weights, 1, i, i + 1), {B, C, 1, 1});
    auto term = mul(resized[i], w);
    fused = i == 0 ? term : add(fused, term);
  }
  return {fused, weights};
}

template <typename T>
AttentionOutput<T> ssa_forward(std::span<const Var<T>> resized, SsaParams<T>& params) {
  check_same_shape(resized, "ssa_forward");
  return ssa_forward(resized, sum_all(resized), params);
}

template <typename T>
AttentionOutput<T> ssa_forward(std::span<const Var<T>> resized, const Var<T>& base, SsaParams<T>& params) {
  check_same_shape(resized, "ssa_forward");
  const std::size_t n = resized.size();
  if (params.branch_weight.size() != n || params.branch_bias.size() != n) {
    throw ConfigError("ssa_forward: " + std::to_string(params.branch_weight.size()) + " branches for " +
                      std::to_string(n) + " layers");
  }
  auto& tape = *base.tape();
  const Shape& s = base.shape();
  const std::vector<Var<T>> pooled{channel_pool(base, PoolKind::avg), channel_pool(base, PoolKind::max)};
  auto descriptor = concat<T>(pooled, 1);  // [B,2,H,W]
  std::vector<Var<T>> logits;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = params.branch_weight[i].value;
    if (w.rank() != 4 || w.dim(2) % 2 == 0) throw ConfigError("ssa_forward: branch kernels must be odd");
    logits.push_back(conv2d(descriptor, tape.param(params.branch_weight[i]), tape.param(params.branch_bias[i]),
                            {1, w.dim(2) / 2}));
  }
  auto weights = softmax_across_layers(logits, {s[0], 1, s[2], s[3]});  // [B,n,1,H,W]
  weights = reshape(weights, {s[0], n, s[2], s[3]});
  Var<T> fused;
  for (std::size_t i = 0; i < n; ++i) {
    auto term = mul(resized[i], slice(weights, 1, i, i + 1));
    fused = i == 0 ? term : add(fused, term);
  }
  return {fused, weights};
}

template <typename T>
Var<T> dr_forward(const Var<T>& v, DrParams<T>& params) {
  auto& tape = *v.tape();
  const Shape& s = v.shape();
  if (s.size() != 4 || params.key_weight.value.dim(1) != s[1]) {
    throw ShapeError("dr_forward: input " + shape_str(s) + " does not match context key " +
                     shape_str(params.key_weight.value.shape()));
  }
  const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
  auto keys = conv2d(v, tape.param(params.key_weight), std::nullopt);  // [B,1,H,W]
  auto attn = reshape(softmax(reshape(keys, {B, H * W}), 1), {B, 1, H, W});
  auto context = reduce_sum(mul(v, attn), {2, 3});  // [B,C,1,1]
  auto t = conv2d(context, tape.param(params.down_weight), tape.param(params.down_bias));
  t = relu(layer_norm(t, tape.param(params.norm_scale), tape.param(params.norm_shift)));
  t = conv2d(t, tape.param(params.up_weight), tape.param(params.up_bias));
  if (t.shape() != Shape{B, C, 1, 1}) throw ShapeError("dr_forward: transform produced " + shape_str(t.shape()));
  return add(v, t);
}

template <typename T>
FeaturePyramid<T> neck_forward(const FeaturePyramid<T>& p, NeckParams<T>& params, const NeckConfig& cfg) {
  p.validate();
  cfg.validate();
  if (!cfg.any_enabled()) return p;
  if (p.size() != cfg.n_levels) {
    throw ConfigError("neck: pyramid has " + std::to_string(p.size()) + " levels, config expects " +
                      std::to_string(cfg.n_levels));
  }
  const std::size_t sets = cfg.share_weights ? 1 : cfg.n_levels;
  if (params.levels.size() != sets) throw ConfigError("neck: parameter sets do not match config");

  FeaturePyramid<T> out;
  out.strides = p.strides;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& lp = params.levels[cfg.share_weights ? 0 : i];
    if (cfg.use_sca != lp.sca.has_value() || cfg.use_ssa != lp.ssa.has_value() || cfg.use_dr != lp.dr.has_value()) {
      throw ConfigError("neck: parameters do not match toggles at level " + std::to_string(i));
    }
    const auto& x = p.levels[i];
    if (!cfg.use_sca && !cfg.use_ssa) {
      // DR alone refines the level itself; it already carries the residual.
      out.levels.push_back(dr_forward(x, *lp.dr));
      continue;
    }
    const auto resized = resize_to_level(p, i);
    const auto base = sum_all<T>(resized);
    Var<T> enhanced;
    if (cfg.use_sca) enhanced = sca_forward<T>(resized, base, *lp.sca).fused;
    if (cfg.use_ssa) {
      auto vs = ssa_forward<T>(resized, base, *lp.ssa).fused;
      enhanced = cfg.use_sca ? add(enhanced, vs) : vs;
    }
    if (cfg.use_dr) enhanced = dr_forward(enhanced, *lp.dr);
    out.levels.push_back(add(x, enhanced));
  }
  return out;
}

#define SDA_INSTANTIATE_NECK(T)                                                                                  \
  template struct FeaturePyramid<T>;                                                                             \
  template NeckParams<T> init_neck_params<T>(const NeckConfig&, std::mt19937_64&);                               \
  template void visit_params<T>(NeckParams<T>&, const ParamVisitor<T>&);                                         \
  template std::vector<Var<T>> resize_to_level<T>(const FeaturePyramid<T>&, std::size_t);                        \
  template Var<T> fuse_base<T>(const FeaturePyramid<T>&, std::size_t);                                           \
  template AttentionOutput<T> sca_forward<T>(std::span<const Var<T>>, ScaParams<T>&);                            \
  template AttentionOutput<T> sca_forward<T>(std::span<const Var<T>>, const Var<T>&, ScaParams<T>&);             \
  template AttentionOutput<T> ssa_forward<T>(std::span<const Var<T>>, SsaParams<T>&);                            \
  template AttentionOutput<T> ssa_forward<T>(std::span<const Var<T>>, const Var<T>&, SsaParams<T>&);             \
  template Var<T> dr_forward<T>(const Var<T>&, DrParams<T>&);                                                    \
  template FeaturePyramid<T> neck_forward<T>(const FeaturePyramid<T>&, NeckParams<T>&, const NeckConfig&);

SDA_INSTANTIATE_NECK(float)
SDA_INSTANTIATE_NECK(double)

}  // namespace sda::neck
