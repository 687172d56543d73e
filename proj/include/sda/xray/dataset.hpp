#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sda/xray/scene.hpp"

namespace sda::xray {

struct ImageEntry {
  std::int64_t id = 0;
  std::string file;  // relative to the dataset directory
  std::size_t width = 0, height = 0;
  // Generator provenance, kept so records can be rebuilt and audited.
  Mode mode = Mode::easy;
  std::uint64_t seed = 0;
  std::vector<ClutterItem> clutter;
  bool operator==(const ImageEntry&) const = default;
};

struct AnnotationEntry {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  int category_id = 0;
  BBox bbox{};
  std::vector<std::vector<double>> segmentation;  // flat [x0, y0, x1, y1, ...] rings
  double area = 0.0;
  int iscrowd = 0;
  bool operator==(const AnnotationEntry&) const = default;
};

struct Category {
  int id = 0;
  std::string name;
  bool operator==(const Category&) const = default;
};

struct DatasetManifest {
  std::vector<ImageEntry> images;
  std::vector<AnnotationEntry> annotations;
  std::vector<Category> categories;

  /// Unique ids; every annotation references an existing image and category.
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);
void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

std::vector<double> flatten(const Polygon& p);
Polygon unflatten(const std::vector<double>& flat);

DatasetManifest build_manifest(const std::vector<SceneRecord>& records, const std::vector<ItemClass>& classes);

/// Writes images/NNNNNN.sdat and annotations.json under `out_dir`.
DatasetManifest export_dataset(const std::vector<SceneRecord>& records, const std::vector<ItemClass>& classes,
                               const std::filesystem::path& out_dir);

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<SceneRecord> records;  // in manifest image order
};

/// Reads annotations.json and every referenced image. Throws IoError with the path.
LoadedDataset import_dataset(const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& file);
void save_json(const std::filesystem::path& file, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& file);

/// Split names accepted by generate_split: easy, hard, hidden, train.
/// Train scenes draw their mode uniformly from the three test modes.
std::vector<SceneRecord> generate_split(const std::string& split, std::size_t count, std::uint64_t base_seed,
                                        const GeneratorConfig& cfg);

/// Per-record seed derived from (base seed, split, index).
std::uint64_t record_seed(std::uint64_t base_seed, const std::string& split, std::size_t index);

}  // namespace sda::xray
