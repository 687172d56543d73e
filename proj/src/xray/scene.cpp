#include "sda/xray/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sda/errors.hpp"

namespace sda::xray {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::easy: return "easy";
    case Mode::hard: return "hard";
    case Mode::hidden: return "hidden";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "easy") return Mode::easy;
  if (s == "hard") return Mode::hard;
  if (s == "hidden") return Mode::hidden;
  throw ConfigError("unknown mode '" + s + "'");
}

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig cfg;
  cfg.classes = {
      {"gun", "lshape", {0.25, 0.35, 0.65}, 0.5},
      {"knife", "blade", {0.45, 0.70, 0.35}, 0.3},
      {"wrench", "tshape", {0.75, 0.45, 0.25}, 0.2},
  };
  cfg.clutter = {
      {"cable", "wire", {0.55, 0.55, 0.60}, 0.5},
      {"pouch", "ellipse", {0.80, 0.74, 0.66}, 0.5},
  };
  return cfg;
}

void GeneratorConfig::validate() const {
  auto check_items = [](const std::vector<ItemClass>& items, const char* what) {
    for (const auto& c : items) {
      if (!is_known_template(c.shape)) throw ConfigError(std::string(what) + " '" + c.name + "': unknown template");
      for (double a : c.attenuation) {
        if (!(a > 0.0 && a <= 1.0)) throw ConfigError(std::string(what) + " '" + c.name + "': attenuation outside (0,1]");
      }
      if (!(c.weight > 0.0)) throw ConfigError(std::string(what) + " '" + c.name + "': weight must be positive");
    }
  };
  if (image_size < 32) throw ConfigError("generator: image_size must be >= 32");
  if (classes.empty()) throw ConfigError("generator: at least one target class required");
  if (clutter.empty()) throw ConfigError("generator: at least one clutter template required");
  check_items(classes, "class");
  check_items(clutter, "clutter");
  if (!(hidden_overlap_min >= 0.0 && hidden_overlap_min <= 1.0)) {
    throw ConfigError("generator: hidden_overlap_min must lie in [0,1]");
  }
  if (!(target_scale[0] >= 4.0 && target_scale[0] <= target_scale[1] && target_scale[1] < double(image_size) / 2)) {
    throw ConfigError("generator: target_scale must satisfy 4 <= min <= max < image_size/2");
  }
  if (hard_targets[0] < 2 || hard_targets[0] > hard_targets[1]) throw ConfigError("generator: hard_targets invalid");
  if (hidden_targets[0] < 1 || hidden_targets[0] > hidden_targets[1]) {
    throw ConfigError("generator: hidden_targets invalid");
  }
  if (background_clutter[0] > background_clutter[1]) throw ConfigError("generator: background_clutter invalid");
  if (max_attempts == 0) throw ConfigError("generator: max_attempts must be >= 1");
}

double clutter_overlap(const Polygon& target, const std::vector<ClutterItem>& clutter, std::size_t height,
                       std::size_t width) {
  const Mask t = rasterize_mask(target, height, width);
  const std::size_t total = t.count();
  if (total == 0) return 0.0;
  std::vector<Mask> masks;
  for (const auto& c : clutter) masks.push_back(rasterize_mask(c.polygon, height, width));
  const Mask u = mask_union(masks, height, width);
  return double(intersection_count(t, u)) / double(total);
}

AuditResult audit_record(const SceneRecord& r, double hidden_overlap_min) {
  AuditResult res;
  const std::size_t n = r.instances.size();
  switch (r.mode) {
    case Mode::easy:
      if (n != 1) res = {false, "easy record has " + std::to_string(n) + " targets", 1.0};
      break;
    case Mode::hard:
      if (n < 2) res = {false, "hard record has " + std::to_string(n) + " targets", 1.0};
      break;
    case Mode::hidden: {
      if (n == 0) return {false, "hidden record has no targets", 0.0};
      const std::size_t H = r.image.dim(1), W = r.image.dim(2);
      for (const auto& inst : r.instances) {
        const double ov = clutter_overlap(inst.polygon, r.clutter, H, W);
        res.min_overlap = std::min(res.min_overlap, ov);
      }
      if (res.min_overlap < hidden_overlap_min) {
        res.ok = false;
        res.reason = "hidden record overlap " + std::to_string(res.min_overlap) + " below threshold";
      }
      break;
    }
  }
  return res;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t uniform_count(Rng& rng, std::array<std::size_t, 2> range) {
  return std::uniform_int_distribution<std::size_t>(range[0], range[1])(rng);
}

std::size_t pick_weighted(Rng& rng, const std::vector<ItemClass>& items) {
  std::vector<double> w;
  for (const auto& c : items) w.push_back(c.weight);
  return std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
}

double box_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a[0] + a[2], b[0] + b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[1] + a[3], b[1] + b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy, uni = a[2] * a[3] + b[2] * b[3] - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool inside_image(const BBox& b, double size, double margin) {
  return b[0] >= margin && b[1] >= margin && b[0] + b[2] <= size - margin && b[1] + b[3] <= size - margin;
}

class SceneBuilder {
 public:
  SceneBuilder(Mode mode, std::uint64_t seed, const GeneratorConfig& cfg)
      : mode_(mode), seed_(seed), cfg_(cfg), size_(double(cfg.image_size)) {}

  SceneRecord build() {
    Rng rng(seed_);
    Tensor<float> background = make_background(rng);
    for (std::size_t attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
      if (auto rec = try_place(rng)) {
        rec->image = render(background, *rec);
        return std::move(*rec);
      }
    }
    throw GenerationError("could not satisfy " + to_string(mode_) + " constraints for seed " +
                          std::to_string(seed_) + " in " + std::to_string(cfg_.max_attempts) + " attempts");
  }

 private:
  Tensor<float> make_background(Rng& rng) const {
    const std::size_t n = cfg_.image_size;
    Tensor<float> bg(Shape{3, n, n});
    std::uniform_real_distribution<double> noise(-0.015, 0.015);
    for (auto& v : bg.data()) v = static_cast<float>(0.96 + noise(rng));
    // The bag itself: a faint rectangle over most of the frame.
    const double m0 = uniform(rng, 2, 10), m1 = uniform(rng, 2, 10);
    const double m2 = uniform(rng, 2, 10), m3 = uniform(rng, 2, 10);
    const Item bag{-1, {{m0, m1}, {size_ - m2, m1}, {size_ - m2, size_ - m3}, {m0, size_ - m3}}, {0.92, 0.93, 0.95}};
    return composite(bg, std::span(&bag, 1));
  }

  Polygon place_target(Rng& rng, const ItemClass& cls, const std::vector<Instance>& placed, bool& ok) const {
    const Polygon unit = template_polygon(cls.shape);
    for (int tries = 0; tries < 50; ++tries) {
      const double s = uniform(rng, cfg_.target_scale[0], cfg_.target_scale[1]);
      Transform t;
      t.scale_x = s;
      t.scale_y = s * uniform(rng, 0.8, 1.2);
      t.rotation = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      t.tx = uniform(rng, 0.0, size_);
      t.ty = uniform(rng, 0.0, size_);
      Polygon p = transform_polygon(t, unit);
      const BBox b = bounding_box(p);
      if (!inside_image(b, size_, 2.0)) continue;
      bool clear = true;
      for (const auto& other : placed) clear = clear && box_iou(b, other.bbox) < 0.1;
      if (!clear) continue;
      ok = true;
      return p;
    }
    ok = false;
    return {};
  }

  ClutterItem random_clutter(Rng& rng, std::optional<BBox> over) const {
    const std::size_t kind = pick_weighted(rng, cfg_.clutter);
    const Polygon unit = template_polygon(cfg_.clutter[kind].shape);
    Transform t;
    t.rotation = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    if (over) {
      // Sized and centred on the target so a large share of it is covered.
      const auto& b = *over;
      const double extent = std::max(b[2], b[3]);
      t.scale_x = extent * uniform(rng, 1.0, 1.5);
      t.scale_y = extent * uniform(rng, 0.7, 1.3);
      t.tx = b[0] + b[2] / 2 + uniform(rng, -0.2, 0.2) * b[2];
      t.ty = b[1] + b[3] / 2 + uniform(rng, -0.2, 0.2) * b[3];
    } else {
      const double s = uniform(rng, 0.15, 0.45) * size_;
      t.scale_x = s;
      t.scale_y = s * uniform(rng, 0.6, 1.2);
      t.tx = uniform(rng, 0.0, size_);
      t.ty = uniform(rng, 0.0, size_);
    }
    return {static_cast<int>(kind), transform_polygon(t, unit)};
  }

  std::optional<SceneRecord> try_place(Rng& rng) const {
    SceneRecord rec;
    rec.mode = mode_;
    rec.seed = seed_;
    std::size_t n_targets = 1;
    if (mode_ == Mode::hard) n_targets = uniform_count(rng, cfg_.hard_targets);
    if (mode_ == Mode::hidden) n_targets = uniform_count(rng, cfg_.hidden_targets);
    for (std::size_t i = 0; i < n_targets; ++i) {
      const std::size_t cls = pick_weighted(rng, cfg_.classes);
      bool ok = false;
      Polygon p = place_target(rng, cfg_.classes[cls], rec.instances, ok);
      if (!ok) return std::nullopt;
      rec.instances.push_back({static_cast<int>(cls), bounding_box(p), p, polygon_area(p)});
    }
    if (mode_ == Mode::hidden) {
      for (const auto& inst : rec.instances) {
        const std::size_t covering = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
        for (std::size_t k = 0; k < covering; ++k) rec.clutter.push_back(random_clutter(rng, inst.bbox));
      }
    }
    const std::size_t extra = uniform_count(rng, cfg_.background_clutter);
    for (std::size_t k = 0; k < extra; ++k) rec.clutter.push_back(random_clutter(rng, std::nullopt));
    rec.clutter_count = rec.clutter.size();

    if (mode_ == Mode::hidden) {
      if (worst_overlap(rec) < cfg_.hidden_overlap_min) return std::nullopt;
    }
    return rec;
  }

  double worst_overlap(const SceneRecord& rec) const {
    double worst = 1.0;
    for (const auto& inst : rec.instances) {
      worst = std::min(worst, clutter_overlap(inst.polygon, rec.clutter, cfg_.image_size, cfg_.image_size));
    }
    return worst;
  }

  Tensor<float> render(const Tensor<float>& background, const SceneRecord& rec) const {
    std::vector<Item> items;
    for (const auto& inst : rec.instances) {
      items.push_back({inst.class_id, inst.polygon, cfg_.classes[std::size_t(inst.class_id)].attenuation});
    }
    for (const auto& c : rec.clutter) items.push_back({-1, c.polygon, cfg_.clutter[std::size_t(c.kind)].attenuation});
    return composite(background, items);
  }

  Mode mode_;
  std::uint64_t seed_;
  const GeneratorConfig& cfg_;
  double size_;
};

}  // namespace

SceneRecord generate_scene(Mode mode, std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  return SceneBuilder(mode, seed, cfg).build();
}

}  // namespace sda::xray
