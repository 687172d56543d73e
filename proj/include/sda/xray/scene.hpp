#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sda/tensor/tensor.hpp"
#include "sda/xray/geometry.hpp"
#include "sda/xray/raster.hpp"

namespace sda::xray {

enum class Mode { easy, hard, hidden };

std::string to_string(Mode m);
/// Throws ConfigError for anything but "easy", "hard" or "hidden".
Mode parse_mode(const std::string& s);

struct ItemClass {
  std::string name;
  std::string shape;  // template name
  std::array<double, 3> attenuation{1.0, 1.0, 1.0};
  double weight = 1.0;  // relative sampling weight
};

struct SplitCounts {
  std::size_t easy = 100, hard = 100, hidden = 100, train = 500;
};

struct GeneratorConfig {
  std::size_t image_size = 128;
  std::vector<ItemClass> classes;
  std::vector<ItemClass> clutter;
  SplitCounts counts;
  double hidden_overlap_min = 0.5;
  std::array<double, 2> target_scale{14.0, 44.0};  // template extent in pixels
  std::array<std::size_t, 2> hard_targets{2, 4};
  std::array<std::size_t, 2> hidden_targets{1, 2};
  std::array<std::size_t, 2> background_clutter{1, 3};
  std::size_t max_attempts = 100;

  /// Three target classes and two clutter kinds with a skewed class mix.
  static GeneratorConfig defaults();
  void validate() const;
};

struct Instance {
  int class_id = 0;
  BBox bbox{};
  Polygon polygon;
  double area = 0.0;
  bool operator==(const Instance&) const = default;
};

struct ClutterItem {
  int kind = 0;  // index into GeneratorConfig::clutter
  Polygon polygon;
  bool operator==(const ClutterItem&) const = default;
};

struct SceneRecord {
  Tensor<float> image;  // [3, H, W] in [0, 1]
  std::vector<Instance> instances;
  std::vector<ClutterItem> clutter;
  Mode mode = Mode::easy;
  std::size_t clutter_count = 0;
  std::uint64_t seed = 0;
  bool operator==(const SceneRecord&) const = default;
};

/// Deterministic per (mode, seed, config). Throws GenerationError naming the
/// seed when the constraints cannot be met within `max_attempts` placements.
SceneRecord generate_scene(Mode mode, std::uint64_t seed, const GeneratorConfig& cfg);

/// Fraction of the target's pixels covered by the union of `clutter`.
double clutter_overlap(const Polygon& target, const std::vector<ClutterItem>& clutter, std::size_t height,
                       std::size_t width);

struct AuditResult {
  bool ok = true;
  std::string reason;
  double min_overlap = 1.0;  // smallest target coverage, hidden mode only
};

/// Checks the split invariant of a record against its own geometry.
AuditResult audit_record(const SceneRecord& r, double hidden_overlap_min);

}  // namespace sda::xray
