#include "sda/detector/loss.hpp"

#include <cmath>

#include "sda/errors.hpp"

namespace sda::detector {

namespace {

template <typename T>
T softplus(T x) {
  return x > T{0} ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid_of(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

}  // namespace

template <typename T>
Var<T> quality_focal_sum(const Var<T>& logits, const Tensor<T>& target, double beta) {
  const auto& x = logits.value();
  if (x.shape() != target.shape()) {
    throw ShapeError("quality_focal_sum: logits " + shape_str(x.shape()) + " vs target " + shape_str(target.shape()));
  }
  const T b = static_cast<T>(beta);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid_of(x[i]), y = target[i];
    const T d = std::abs(y - s);
    if (d == T{0}) continue;
    const T bce = softplus(x[i]) - y * x[i];  // -[y log s + (1-y) log(1-s)]
    total += double(std::pow(d, b) * bce);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  auto& tape = *logits.tape();
  Tensor<T> tgt = target;
  return tape.record(std::move(out), {logits},
                     [x, tgt = std::move(tgt), b](const Tensor<T>&, const Tensor<T>& g, typename Tape<T>::GradSlots in) {
                       if (!in[0]) return;
                       const T go = g.item();
                       auto dst = in[0]->data();
                       for (std::size_t i = 0; i < x.size(); ++i) {
                         const T s = sigmoid_of(x[i]), y = tgt[i];
                         const T diff = s - y;
                         const T d = std::abs(diff);
                         if (d == T{0}) continue;
                         const T bce = softplus(x[i]) - y * x[i];
                         const T ds = s * (T{1} - s);
                         // d|s-y|^b/dx = b |s-y|^(b-1) sign(s-y) s(1-s); dBCE/dx = s - y.
                         const T dq = b * std::pow(d, b - T{1}) * (diff > T{0} ? T{1} : T{-1}) * ds;
                         dst[i] += go * (dq * bce + std::pow(d, b) * diff);
                       }
                     });
}

template <typename T>
Var<T> masked_l1_sum(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  const auto& p = pred.value();
  if (p.shape() != target.shape() || p.rank() != 4 || mask.rank() != 4 || mask.dim(0) != p.dim(0) ||
      mask.dim(1) != 1 || mask.dim(2) != p.dim(2) || mask.dim(3) != p.dim(3)) {
    throw ShapeError("masked_l1_sum: pred " + shape_str(p.shape()) + ", target " + shape_str(target.shape()) +
                     ", mask " + shape_str(mask.shape()));
  }
  const std::size_t B = p.dim(0), C = p.dim(1), HW = p.dim(2) * p.dim(3);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const T m = mask[b * HW + i];
        if (m == T{0}) continue;
        const std::size_t k = (b * C + c) * HW + i;
        total += double(m * std::abs(p[k] - target[k]));
      }
  auto& tape = *pred.tape();
  return tape.record(Tensor<T>::scalar(static_cast<T>(total)), {pred},
                     [p, target, mask, B, C, HW](const Tensor<T>&, const Tensor<T>& g, typename Tape<T>::GradSlots in) {
                       if (!in[0]) return;
                       const T go = g.item();
                       auto dst = in[0]->data();
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t i = 0; i < HW; ++i) {
                             const T m = mask[b * HW + i];
                             const std::size_t k = (b * C + c) * HW + i;
                             const T r = p[k] - target[k];
                             if (m == T{0} || r == T{0}) continue;
                             dst[k] += go * m * (r > T{0} ? T{1} : T{-1});
                           }
                     });
}

template <typename T>
Var<T> detection_loss(const std::vector<LevelOutput<T>>& outputs, const std::vector<LevelTargets<T>>& targets,
                      const LossConfig& cfg, LossParts* parts) {
  if (outputs.size() != targets.size() || outputs.empty()) {
    throw ShapeError("detection_loss: " + std::to_string(outputs.size()) + " output levels vs " +
                     std::to_string(targets.size()) + " target levels");
  }
  std::size_t num_pos = 0;
  for (const auto& t : targets) num_pos += t.num_pos;
  const T norm = T{1} / static_cast<T>(std::max<std::size_t>(1, num_pos));

  LossParts lp;
  lp.num_pos = num_pos;
  Var<T> total;
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    const auto& o = outputs[l];
    const auto& t = targets[l];
    auto heat = quality_focal_sum(o.heatmap, t.heatmap, cfg.focal_beta);
    auto size = masked_l1_sum(o.size, t.size, t.mask);
    auto off = masked_l1_sum(o.offset, t.offset, t.mask);
    lp.heatmap += double(heat.value().item()) * double(norm);
    lp.size += double(size.value().item()) * double(norm);
    lp.offset += double(off.value().item()) * double(norm);
    auto level = add(add(heat, scale(size, static_cast<T>(cfg.size_weight))), scale(off, static_cast<T>(cfg.offset_weight)));
    total = l == 0 ? level : add(total, level);
  }
  if (parts) *parts = lp;
  return scale(total, norm);
}

#define SDA_INSTANTIATE_LOSS(T)                                                                          \
  template Var<T> quality_focal_sum<T>(const Var<T>&, const Tensor<T>&, double);                         \
  template Var<T> masked_l1_sum<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Var<T> detection_loss<T>(const std::vector<LevelOutput<T>>&, const std::vector<LevelTargets<T>>&, \
                                    const LossConfig&, LossParts*);

SDA_INSTANTIATE_LOSS(float)
SDA_INSTANTIATE_LOSS(double)

}  // namespace sda::detector
