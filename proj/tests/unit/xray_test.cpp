#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "sda/errors.hpp"
#include "sda/log.hpp"
#include "sda/xray/dataset.hpp"

using namespace sda;
using namespace sda::xray;

namespace {

// Crossing-number test on a pixel centre; independent of the scanline filler.
bool point_in_polygon(const Polygon& p, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
    if ((p[i].y > y) != (p[j].y > y) && x < (p[j].x - p[i].x) * (y - p[i].y) / (p[j].y - p[i].y) + p[i].x) {
      inside = !inside;
    }
  }
  return inside;
}

Mask brute_force_mask(const Polygon& p, std::size_t H, std::size_t W) {
  Mask m(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) m.set(y, x, point_in_polygon(p, x + 0.5, y + 0.5));
  return m;
}

// Coverage of a target by the clutter union, counted pixel by pixel.
double oracle_overlap(const Polygon& target, const std::vector<ClutterItem>& clutter, std::size_t n) {
  std::size_t total = 0, covered = 0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      if (!point_in_polygon(target, x + 0.5, y + 0.5)) continue;
      ++total;
      for (const auto& c : clutter) {
        if (point_in_polygon(c.polygon, x + 0.5, y + 0.5)) {
          ++covered;
          break;
        }
      }
    }
  return total ? double(covered) / double(total) : 0.0;
}

Polygon random_polygon(std::mt19937_64& rng, std::size_t n_vertices, double size) {
  // Star-shaped around a centre with sorted angles, hence simple.
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> angles;
  for (std::size_t i = 0; i < n_vertices; ++i) angles.push_back(u(rng) * 2 * M_PI);
  std::sort(angles.begin(), angles.end());
  const double cx = size * (0.2 + 0.6 * u(rng)), cy = size * (0.2 + 0.6 * u(rng));
  Polygon p;
  for (double a : angles) {
    const double r = size * (0.1 + 0.5 * u(rng));
    p.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return p;
}

struct WarningCapture {
  std::vector<std::string> seen;
  WarningHandler previous;
  WarningCapture() {
    previous = set_warning_handler([this](const std::string& m) { seen.push_back(m); });
  }
  ~WarningCapture() { set_warning_handler(previous); }
};

}  // namespace

TEST(Raster, RectangleCoversTwelvePixels) {
  const Polygon rect{{0, 0}, {4, 0}, {4, 3}, {0, 3}};
  const Mask m = rasterize_mask(rect, 8, 8);
  EXPECT_EQ(m.count(), 12u);
  EXPECT_EQ(m, brute_force_mask(rect, 8, 8));
}

TEST(Raster, TriangleMatchesBruteForce) {
  const Polygon tri{{1.3, 0.7}, {7.9, 3.2}, {2.1, 7.4}};
  EXPECT_EQ(rasterize_mask(tri, 9, 9), brute_force_mask(tri, 9, 9));
}

TEST(Raster, RandomPolygonsMatchBruteForce) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const Polygon p = random_polygon(rng, 3 + i % 9, 24);
    EXPECT_EQ(rasterize_mask(p, 24, 24), brute_force_mask(p, 24, 24)) << "case " << i;
  }
}

TEST(Raster, OutsideImageIsEmpty) {
  const Polygon p{{20, 20}, {30, 20}, {30, 30}};
  EXPECT_EQ(rasterize_mask(p, 8, 8).count(), 0u);
  const Polygon left{{-10, 1}, {-2, 1}, {-2, 6}};
  EXPECT_EQ(rasterize_mask(left, 8, 8).count(), 0u);
}

TEST(Raster, DegeneratePolygonWarnsAndIsEmpty) {
  WarningCapture cap;
  const Polygon line{{0, 0}, {4, 4}, {8, 8}};
  EXPECT_EQ(rasterize_mask(line, 8, 8).count(), 0u);
  EXPECT_EQ(cap.seen.size(), 1u);
}

TEST(Geometry, AreaAndBoundingBox) {
  const Polygon rect{{1, 2}, {5, 2}, {5, 5}, {1, 5}};
  EXPECT_DOUBLE_EQ(polygon_area(rect), 12.0);
  EXPECT_EQ(bounding_box(rect), (BBox{1, 2, 4, 3}));
  EXPECT_TRUE(is_simple(rect));
  const Polygon bowtie{{0, 0}, {2, 2}, {2, 0}, {0, 2}};
  EXPECT_FALSE(is_simple(bowtie));
}

TEST(Geometry, TemplatesAreSimple) {
  for (const auto& name : template_names()) {
    const Polygon p = template_polygon(name);
    EXPECT_GE(p.size(), 3u) << name;
    EXPECT_TRUE(is_simple(p)) << name;
    EXPECT_GT(polygon_area(p), 0.0) << name;
  }
  EXPECT_THROW(template_polygon("teapot"), ConfigError);
}

TEST(Composite, NoItemsReturnsBackground) {
  std::mt19937_64 rng(2);
  Tensor<float> bg(Shape{3, 6, 6});
  for (auto& v : bg.data()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  EXPECT_EQ(composite(bg, {}), bg);
}

TEST(Composite, HalfAttenuationOnWhite) {
  const Tensor<float> bg(Shape{3, 8, 8}, 1.0f);
  const Item item{0, {{0, 0}, {4, 0}, {4, 3}, {0, 3}}, {0.5, 0.5, 0.5}};
  const auto out = composite(bg, std::span(&item, 1));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(out[(c * 8 + y) * 8 + x], (x < 4 && y < 3) ? 0.5f : 1.0f);
}

TEST(Composite, OrderInvariantAndMonotone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> a(0.05, 1.0);
  Tensor<float> bg(Shape{3, 24, 24});
  for (auto& v : bg.data()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  std::vector<Item> items;
  for (int i = 0; i < 6; ++i) items.push_back({i, random_polygon(rng, 6, 24), {a(rng), a(rng), a(rng)}});
  const auto ref = composite(bg, items);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(items.begin(), items.end(), rng);
    EXPECT_EQ(composite(bg, items), ref);
  }
  Tensor<float> prev = bg;
  for (std::size_t n = 1; n <= items.size(); ++n) {
    const auto cur = composite(bg, std::span(items.data(), n));
    for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_LE(cur[i], prev[i]);
    for (float v : cur.data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
    prev = cur;
  }
}

TEST(Composite, RejectsInvalidAttenuation) {
  const Tensor<float> bg(Shape{3, 4, 4}, 1.0f);
  const Item item{0, {{0, 0}, {4, 0}, {4, 3}}, {0.0, 0.5, 0.5}};
  EXPECT_THROW(composite(bg, std::span(&item, 1)), ValueError);
}

TEST(Scene, SplitInvariantsHoldUnderPixelOracle) {
  const auto cfg = GeneratorConfig::defaults();
  for (Mode mode : {Mode::easy, Mode::hard, Mode::hidden}) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto r = generate_scene(mode, seed, cfg);
      ASSERT_EQ(r.image.shape(), (Shape{3, 128, 128}));
      for (float v : r.image.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
      if (mode == Mode::easy) {
        EXPECT_EQ(r.instances.size(), 1u);
      }
      if (mode == Mode::hard) {
        EXPECT_GE(r.instances.size(), 2u);
      }
      if (mode == Mode::hidden) {
        for (const auto& inst : r.instances) EXPECT_GE(oracle_overlap(inst.polygon, r.clutter, 128), 0.5);
      }
      EXPECT_TRUE(audit_record(r, cfg.hidden_overlap_min).ok);
    }
  }
}

TEST(Scene, AnnotationsMatchGeometry) {
  const auto cfg = GeneratorConfig::defaults();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = generate_scene(Mode::hard, seed, cfg);
    EXPECT_EQ(r.clutter_count, r.clutter.size());
    for (const auto& inst : r.instances) {
      EXPECT_TRUE(is_simple(inst.polygon));
      EXPECT_EQ(inst.bbox, bounding_box(inst.polygon));
      EXPECT_DOUBLE_EQ(inst.area, polygon_area(inst.polygon));
      EXPECT_GE(inst.class_id, 0);
      EXPECT_LT(inst.class_id, 3);
      // The mask sits inside the box and reaches to within 1.5 px of each side;
      // sub-pixel slivers at vertices carry no pixel centre.
      const Mask m = brute_force_mask(inst.polygon, 128, 128);
      std::size_t x0 = 128, y0 = 128, x1 = 0, y1 = 0;
      for (std::size_t y = 0; y < 128; ++y)
        for (std::size_t x = 0; x < 128; ++x)
          if (m.at(y, x)) {
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
          }
      ASSERT_LE(x0, x1);
      const auto& b = inst.bbox;
      EXPECT_GE(x0 + 0.5, b[0]);
      EXPECT_LE(x1 + 0.5, b[0] + b[2]);
      EXPECT_GE(y0 + 0.5, b[1]);
      EXPECT_LE(y1 + 0.5, b[1] + b[3]);
      EXPECT_LE(double(x0) - b[0], 1.5);
      EXPECT_LE(b[0] + b[2] - double(x1 + 1), 1.5);
      EXPECT_LE(double(y0) - b[1], 1.5);
      EXPECT_LE(b[1] + b[3] - double(y1 + 1), 1.5);
    }
  }
}

TEST(Scene, DeterministicPerSeed) {
  const auto cfg = GeneratorConfig::defaults();
  EXPECT_EQ(generate_scene(Mode::hidden, 77, cfg), generate_scene(Mode::hidden, 77, cfg));
  EXPECT_NE(generate_scene(Mode::hidden, 77, cfg).image, generate_scene(Mode::hidden, 78, cfg).image);
}

TEST(Scene, UnsatisfiableOverlapNamesTheSeed) {
  auto cfg = GeneratorConfig::defaults();
  cfg.hidden_overlap_min = 1.0;
  cfg.clutter = {{"thin", "wire", {0.5, 0.5, 0.5}, 1.0}};
  try {
    generate_scene(Mode::hidden, 4242, cfg);
    FAIL() << "expected GenerationError";
  } catch (const GenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("4242"), std::string::npos);
  }
}

TEST(Scene, ClassMixFollowsWeights) {
  auto cfg = GeneratorConfig::defaults();
  std::vector<int> counts(3, 0);
  for (std::uint64_t seed = 0; seed < 600; ++seed) ++counts[generate_scene(Mode::easy, seed, cfg).instances[0].class_id];
  EXPECT_GT(counts[0], counts[1]);
  EXPECT_GT(counts[1], counts[2]);
}

TEST(Dataset, ExportImportRoundTrip) {
  const auto cfg = GeneratorConfig::defaults();
  const auto dir = std::filesystem::temp_directory_path() / "sda_xray_roundtrip";
  std::filesystem::remove_all(dir);
  auto records = generate_split("train", 12, 5, cfg);
  const auto manifest = export_dataset(records, cfg.classes, dir);
  std::size_t n_instances = 0;
  for (const auto& r : records) n_instances += r.instances.size();
  EXPECT_EQ(manifest.annotations.size(), n_instances);
  const auto loaded = import_dataset(dir);
  EXPECT_EQ(loaded.manifest, manifest);
  EXPECT_EQ(loaded.records, records);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, EmptyExportIsValid) {
  const auto dir = std::filesystem::temp_directory_path() / "sda_xray_empty";
  std::filesystem::remove_all(dir);
  const auto m = export_dataset({}, GeneratorConfig::defaults().classes, dir);
  const auto j = load_json(dir / "annotations.json");
  EXPECT_TRUE(j.at("images").empty());
  EXPECT_TRUE(j.at("annotations").empty());
  EXPECT_EQ(j.at("categories").size(), 3u);
  EXPECT_EQ(import_dataset(dir).manifest, m);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ManifestValidationCatchesDanglingReferences) {
  DatasetManifest m;
  m.categories = {{0, "a"}};
  m.images = {{1, "x", 4, 4, Mode::easy, 0, {}}};
  m.annotations = {{1, 2, 0, {0, 0, 1, 1}, {}, 1.0, 0}};
  EXPECT_THROW(m.validate(), ValueError);
  m.annotations[0].image_id = 1;
  EXPECT_NO_THROW(m.validate());
  m.images.push_back(m.images[0]);
  EXPECT_THROW(m.validate(), ValueError);
}

TEST(Dataset, MissingDirectoryIsIoError) {
  EXPECT_THROW(import_dataset("/nonexistent/sda"), IoError);
}

TEST(Dataset, GeneratorConfigJsonRoundTrip) {
  auto cfg = GeneratorConfig::defaults();
  cfg.image_size = 96;
  cfg.counts.train = 7;
  nlohmann::json j = cfg;
  const auto back = j.get<GeneratorConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  j["classes"][0]["template"] = "teapot";
  EXPECT_THROW(j.get<GeneratorConfig>(), ConfigError);
}

TEST(Dataset, SplitSeedsAreDistinctAndStable) {
  EXPECT_EQ(record_seed(1, "easy", 3), record_seed(1, "easy", 3));
  EXPECT_NE(record_seed(1, "easy", 3), record_seed(1, "hard", 3));
  EXPECT_NE(record_seed(1, "easy", 3), record_seed(1, "easy", 4));
  EXPECT_THROW(generate_split("medium", 1, 0, GeneratorConfig::defaults()), ConfigError);
}
