#include "sda/detector/model.hpp"

#include <cstring>

#include "sda/errors.hpp"

namespace sda::detector {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) { return std::mt19937_64(splitmix(seed ^ splitmix(id))); }

}  // namespace

void DetectorConfig::normalize() {
  if (num_classes == 0) throw ConfigError("detector: num_classes must be >= 1");
  if (image_size == 0 || image_size % 16 != 0) {
    throw ConfigError("detector: image_size must be a positive multiple of 16, got " + std::to_string(image_size));
  }
  head.num_classes = num_classes;
  neck.n_levels = 3;
  neck.channels = backbone.channels;
  backbone.validate();
  neck.validate();
  if (decode.image_width <= 0) decode.image_width = double(image_size);
  if (decode.image_height <= 0) decode.image_height = double(image_size);
}

template <typename T>
Detector<T> Detector<T>::init(DetectorConfig cfg, std::uint64_t seed) {
  cfg.normalize();
  Detector d;
  d.cfg = cfg;
  auto rb = stream(seed, 1), rh = stream(seed, 2), rn = stream(seed, 3);
  d.backbone = init_backbone<T>(cfg.backbone, rb);
  d.head = init_head<T>(cfg.head, cfg.backbone.channels, rh);
  if (!cfg.plain_pyramid && cfg.neck.any_enabled()) d.neck = neck::init_neck_params<T>(cfg.neck, rn);
  return d;
}

template <typename T>
ForwardResult<T> Detector<T>::forward(Tape<T>& tape, const Var<T>& images) {
  auto pyramid = backbone_forward(tape, backbone, images);
  if (!cfg.plain_pyramid) pyramid = neck::neck_forward(pyramid, neck, cfg.neck);
  ForwardResult<T> r;
  r.outputs = head_forward(tape, head, pyramid);
  r.strides = pyramid.strides;
  return r;
}

template <typename T>
Var<T> Detector<T>::loss(Tape<T>& tape, const Var<T>& images, const std::vector<std::vector<GtBox>>& boxes,
                         LossParts* parts) {
  if (boxes.size() != images.shape()[0]) {
    throw ShapeError("detector loss: " + std::to_string(boxes.size()) + " box lists for batch of " +
                     std::to_string(images.shape()[0]));
  }
  auto fr = forward(tape, images);
  std::vector<std::array<std::size_t, 2>> extents;
  for (const auto& o : fr.outputs) extents.push_back({o.heatmap.shape()[2], o.heatmap.shape()[3]});
  auto targets = render_targets<T>(boxes, extents, cfg.num_classes, cfg.targets);
  return detection_loss(fr.outputs, targets, cfg.loss, parts);
}

template <typename T>
std::vector<std::vector<Detection>> Detector<T>::predict(const Tensor<T>& images) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  auto fr = forward(tape, tape.constant(images));
  const std::size_t B = images.dim(0);
  std::vector<std::vector<Detection>> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<LevelMaps<T>> maps;
    for (std::size_t l = 0; l < fr.outputs.size(); ++l) {
      const auto& o = fr.outputs[l];
      auto pick = [b](const Tensor<T>& t, bool squash) {
        const std::size_t C = t.dim(1), H = t.dim(2), W = t.dim(3), n = C * H * W;
        std::vector<T> v(t.storage().begin() + std::ptrdiff_t(b * n), t.storage().begin() + std::ptrdiff_t((b + 1) * n));
        if (squash) {
          for (auto& x : v) x = x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
        }
        return Tensor<T>(Shape{C, H, W}, std::move(v));
      };
      maps.push_back({pick(o.heatmap.value(), true), pick(o.size.value(), false), pick(o.offset.value(), false),
                      fr.strides[l]});
    }
    out[b] = decode_detections(maps, cfg.decode);
  }
  return out;
}

template <typename T>
void Detector<T>::visit_params(const ParamVisitor<T>& fn) {
  detector::visit_params(backbone, fn);
  if (!cfg.plain_pyramid && cfg.neck.any_enabled()) neck::visit_params<T>(neck, fn);
  detector::visit_params(head, fn);
}

template <typename T>
Tensor<T> stack_images(const std::vector<const xray::SceneRecord*>& records) {
  if (records.empty()) throw ValueError("stack_images: empty batch");
  const Shape& s0 = records.front()->image.shape();
  if (s0.size() != 3 || s0[0] != 3) throw ShapeError("stack_images: expected [3,H,W], got " + shape_str(s0));
  std::vector<T> data;
  data.reserve(records.size() * shape_numel(s0));
  for (const auto* r : records) {
    if (r->image.shape() != s0) {
      throw ShapeError("stack_images: mixed shapes " + shape_str(s0) + " and " + shape_str(r->image.shape()));
    }
    for (float v : r->image.storage()) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>(Shape{records.size(), s0[0], s0[1], s0[2]}, std::move(data));
}

std::vector<GtBox> gt_boxes(const xray::SceneRecord& record) {
  std::vector<GtBox> out;
  for (const auto& inst : record.instances) out.push_back({inst.class_id, inst.bbox});
  return out;
}

template struct Detector<float>;
template struct Detector<double>;
template Tensor<float> stack_images<float>(const std::vector<const xray::SceneRecord*>&);
template Tensor<double> stack_images<double>(const std::vector<const xray::SceneRecord*>&);

}  // namespace sda::detector
