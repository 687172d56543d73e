#include "sda/xray/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "sda/errors.hpp"
#include "sda/tensor/sdat.hpp"

namespace sda::xray {

using nlohmann::json;

namespace {

json item_class_json(const ItemClass& c) {
  return {{"name", c.name}, {"template", c.shape}, {"attenuation", c.attenuation}, {"weight", c.weight}};
}

ItemClass item_class_from(const json& j) {
  ItemClass c;
  c.name = j.at("name").get<std::string>();
  c.shape = j.at("template").get<std::string>();
  c.attenuation = j.at("attenuation").get<std::array<double, 3>>();
  c.weight = j.value("weight", 1.0);
  return c;
}

json clutter_json(const ClutterItem& c) { return {{"kind", c.kind}, {"polygon", flatten(c.polygon)}}; }

}  // namespace

std::vector<double> flatten(const Polygon& p) {
  std::vector<double> out;
  out.reserve(2 * p.size());
  for (const auto& v : p) {
    out.push_back(v.x);
    out.push_back(v.y);
  }
  return out;
}

Polygon unflatten(const std::vector<double>& flat) {
  if (flat.size() % 2 != 0) throw ValueError("polygon coordinate list has odd length");
  Polygon p;
  for (std::size_t i = 0; i < flat.size(); i += 2) p.push_back({flat[i], flat[i + 1]});
  return p;
}

void DatasetManifest::validate() const {
  std::set<std::int64_t> image_ids, ann_ids;
  std::set<int> cat_ids;
  for (const auto& c : categories) {
    if (!cat_ids.insert(c.id).second) throw ValueError("manifest: duplicate category id " + std::to_string(c.id));
  }
  for (const auto& im : images) {
    if (!image_ids.insert(im.id).second) throw ValueError("manifest: duplicate image id " + std::to_string(im.id));
  }
  for (const auto& a : annotations) {
    if (!ann_ids.insert(a.id).second) throw ValueError("manifest: duplicate annotation id " + std::to_string(a.id));
    if (!image_ids.count(a.image_id)) {
      throw ValueError("manifest: annotation " + std::to_string(a.id) + " references missing image " +
                       std::to_string(a.image_id));
    }
    if (!cat_ids.count(a.category_id)) {
      throw ValueError("manifest: annotation " + std::to_string(a.id) + " references missing category " +
                       std::to_string(a.category_id));
    }
  }
}

void to_json(json& j, const DatasetManifest& m) {
  json images = json::array(), anns = json::array(), cats = json::array();
  for (const auto& im : m.images) {
    json clutter = json::array();
    for (const auto& c : im.clutter) clutter.push_back(clutter_json(c));
    images.push_back({{"id", im.id},
                      {"file_name", im.file},
                      {"width", im.width},
                      {"height", im.height},
                      {"mode", to_string(im.mode)},
                      {"seed", im.seed},
                      {"clutter", clutter}});
  }
  for (const auto& a : m.annotations) {
    anns.push_back({{"id", a.id},
                    {"image_id", a.image_id},
                    {"category_id", a.category_id},
                    {"bbox", a.bbox},
                    {"segmentation", a.segmentation},
                    {"area", a.area},
                    {"iscrowd", a.iscrowd}});
  }
  for (const auto& c : m.categories) cats.push_back({{"id", c.id}, {"name", c.name}});
  j = {{"images", images}, {"annotations", anns}, {"categories", cats}};
}

void from_json(const json& j, DatasetManifest& m) {
  m = {};
  for (const auto& im : j.at("images")) {
    ImageEntry e;
    e.id = im.at("id").get<std::int64_t>();
    e.file = im.at("file_name").get<std::string>();
    e.width = im.at("width").get<std::size_t>();
    e.height = im.at("height").get<std::size_t>();
    e.mode = parse_mode(im.value("mode", std::string("easy")));
    e.seed = im.value("seed", std::uint64_t{0});
    if (im.contains("clutter")) {
      for (const auto& c : im.at("clutter")) {
        e.clutter.push_back({c.at("kind").get<int>(), unflatten(c.at("polygon").get<std::vector<double>>())});
      }
    }
    m.images.push_back(std::move(e));
  }
  for (const auto& a : j.at("annotations")) {
    AnnotationEntry e;
    e.id = a.at("id").get<std::int64_t>();
    e.image_id = a.at("image_id").get<std::int64_t>();
    e.category_id = a.at("category_id").get<int>();
    e.bbox = a.at("bbox").get<BBox>();
    if (a.contains("segmentation")) e.segmentation = a.at("segmentation").get<std::vector<std::vector<double>>>();
    e.area = a.at("area").get<double>();
    e.iscrowd = a.value("iscrowd", 0);
    m.annotations.push_back(std::move(e));
  }
  for (const auto& c : j.at("categories")) m.categories.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
}

void to_json(json& j, const GeneratorConfig& c) {
  json classes = json::array(), clutter = json::array();
  for (const auto& k : c.classes) classes.push_back(item_class_json(k));
  for (const auto& k : c.clutter) clutter.push_back(item_class_json(k));
  j = {{"image_size", c.image_size},
       {"classes", classes},
       {"clutter", clutter},
       {"counts", {{"easy", c.counts.easy}, {"hard", c.counts.hard}, {"hidden", c.counts.hidden}, {"train", c.counts.train}}},
       {"hidden_overlap_min", c.hidden_overlap_min},
       {"target_scale", c.target_scale},
       {"hard_targets", c.hard_targets},
       {"hidden_targets", c.hidden_targets},
       {"background_clutter", c.background_clutter},
       {"max_attempts", c.max_attempts}};
}

void from_json(const json& j, GeneratorConfig& c) {
  c = GeneratorConfig::defaults();
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("classes")) {
    c.classes.clear();
    for (const auto& k : j.at("classes")) c.classes.push_back(item_class_from(k));
  }
  if (j.contains("clutter")) {
    c.clutter.clear();
    for (const auto& k : j.at("clutter")) c.clutter.push_back(item_class_from(k));
  }
  if (j.contains("counts")) {
    const auto& n = j.at("counts");
    c.counts.easy = n.value("easy", c.counts.easy);
    c.counts.hard = n.value("hard", c.counts.hard);
    c.counts.hidden = n.value("hidden", c.counts.hidden);
    c.counts.train = n.value("train", c.counts.train);
  }
  c.hidden_overlap_min = j.value("hidden_overlap_min", c.hidden_overlap_min);
  c.target_scale = j.value("target_scale", c.target_scale);
  c.hard_targets = j.value("hard_targets", c.hard_targets);
  c.hidden_targets = j.value("hidden_targets", c.hidden_targets);
  c.background_clutter = j.value("background_clutter", c.background_clutter);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.validate();
}

DatasetManifest build_manifest(const std::vector<SceneRecord>& records, const std::vector<ItemClass>& classes) {
  DatasetManifest m;
  for (std::size_t k = 0; k < classes.size(); ++k) m.categories.push_back({static_cast<int>(k), classes[k].name});
  std::int64_t ann_id = 1;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    ImageEntry e;
    e.id = static_cast<std::int64_t>(i + 1);
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.sdat", i + 1);
    e.file = name;
    e.height = r.image.dim(1);
    e.width = r.image.dim(2);
    e.mode = r.mode;
    e.seed = r.seed;
    e.clutter = r.clutter;
    m.images.push_back(std::move(e));
    for (const auto& inst : r.instances) {
      m.annotations.push_back({ann_id++, static_cast<std::int64_t>(i + 1), inst.class_id, inst.bbox,
                               {flatten(inst.polygon)}, inst.area, 0});
    }
  }
  return m;
}

void save_json(const std::filesystem::path& file, const json& j) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + file.string());
}

json load_json(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
  const json j = load_json(file);
  try {
    auto m = j.get<DatasetManifest>();
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw IoError("invalid manifest " + file.string() + ": " + e.what());
  }
}

DatasetManifest export_dataset(const std::vector<SceneRecord>& records, const std::vector<ItemClass>& classes,
                               const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  DatasetManifest m = build_manifest(records, classes);
  for (std::size_t i = 0; i < records.size(); ++i) save_sdat(out_dir / m.images[i].file, records[i].image);
  save_json(out_dir / "annotations.json", m);
  return m;
}

LoadedDataset import_dataset(const std::filesystem::path& dir) {
  LoadedDataset out;
  out.manifest = load_manifest(dir / "annotations.json");
  std::map<std::int64_t, std::size_t> index;
  for (const auto& im : out.manifest.images) {
    SceneRecord r;
    r.image = load_sdat_as<float>(dir / im.file);
    if (r.image.shape() != Shape{3, im.height, im.width}) {
      throw IoError("image " + (dir / im.file).string() + " has shape " + shape_str(r.image.shape()));
    }
    r.mode = im.mode;
    r.seed = im.seed;
    r.clutter = im.clutter;
    r.clutter_count = im.clutter.size();
    index[im.id] = out.records.size();
    out.records.push_back(std::move(r));
  }
  for (const auto& a : out.manifest.annotations) {
    Instance inst;
    inst.class_id = a.category_id;
    inst.bbox = a.bbox;
    if (!a.segmentation.empty()) inst.polygon = unflatten(a.segmentation.front());
    inst.area = a.area;
    out.records[index.at(a.image_id)].instances.push_back(std::move(inst));
  }
  return out;
}

std::uint64_t record_seed(std::uint64_t base_seed, const std::string& split, std::size_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t tag = 0xcbf29ce484222325ULL;  // FNV-1a over the split name
  for (unsigned char ch : split) tag = (tag ^ ch) * 0x100000001b3ULL;
  return mix(mix(base_seed ^ tag) + index);
}

std::vector<SceneRecord> generate_split(const std::string& split, std::size_t count, std::uint64_t base_seed,
                                        const GeneratorConfig& cfg) {
  if (split != "train") parse_mode(split);
  std::vector<SceneRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = record_seed(base_seed, split, i);
    Mode mode = split == "train" ? static_cast<Mode>(seed % 3) : parse_mode(split);
    out.push_back(generate_scene(mode, seed, cfg));
  }
  return out;
}

}  // namespace sda::xray
