#include "sda/train/evaluate.hpp"

#include <algorithm>
#include <unordered_map>

#include "sda/errors.hpp"

namespace sda::train {

xray::LoadedDataset make_dataset(std::vector<xray::SceneRecord> records, const std::vector<xray::ItemClass>& classes) {
  xray::LoadedDataset out;
  out.manifest = xray::build_manifest(records, classes);
  out.records = std::move(records);
  return out;
}

xray::LoadedDataset merge_splits(const std::vector<const xray::LoadedDataset*>& parts) {
  xray::LoadedDataset out;
  if (parts.empty()) return out;
  out.manifest.categories = parts.front()->manifest.categories;
  std::int64_t next_image = 1, next_ann = 1;
  for (const auto* p : parts) {
    if (p->manifest.categories != out.manifest.categories) throw ValueError("merge_splits: category lists differ");
    std::unordered_map<std::int64_t, std::int64_t> remap;
    for (std::size_t i = 0; i < p->manifest.images.size(); ++i) {
      auto img = p->manifest.images[i];
      remap[img.id] = next_image;
      img.id = next_image++;
      out.manifest.images.push_back(std::move(img));
      out.records.push_back(p->records.at(i));
    }
    for (auto ann : p->manifest.annotations) {
      ann.image_id = remap.at(ann.image_id);
      ann.id = next_ann++;
      out.manifest.annotations.push_back(std::move(ann));
    }
  }
  return out;
}

xray::LoadedDataset take_first(const xray::LoadedDataset& data, std::size_t n) {
  if (n == 0 || n >= data.manifest.images.size()) return data;
  xray::LoadedDataset out;
  out.manifest.categories = data.manifest.categories;
  out.manifest.images.assign(data.manifest.images.begin(), data.manifest.images.begin() + std::ptrdiff_t(n));
  out.records.assign(data.records.begin(), data.records.begin() + std::ptrdiff_t(n));
  for (const auto& ann : data.manifest.annotations) {
    const bool kept = std::any_of(out.manifest.images.begin(), out.manifest.images.end(),
                                  [&](const auto& img) { return img.id == ann.image_id; });
    if (kept) out.manifest.annotations.push_back(ann);
  }
  return out;
}

xray::LoadedDataset load_split(const std::filesystem::path& root, const std::string& split) {
  if (split == "overall") {
    const auto easy = xray::import_dataset(root / "easy");
    const auto hard = xray::import_dataset(root / "hard");
    const auto hidden = xray::import_dataset(root / "hidden");
    return merge_splits({&easy, &hard, &hidden});
  }
  return xray::import_dataset(root / split);
}

std::vector<eval::EvalDetection> predict_dataset(detector::Detector<float>& model, const xray::LoadedDataset& data,
                                                 std::size_t batch_size) {
  std::vector<eval::EvalDetection> out;
  const std::size_t n = data.records.size();
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    std::vector<const xray::SceneRecord*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data.records[i]);
    const auto dets = model.predict(detector::stack_images<float>(batch));
    for (std::size_t i = start; i < end; ++i) {
      for (const auto& d : dets[i - start]) {
        out.push_back({data.manifest.images[i].id, d.class_id, d.bbox, d.score, std::nullopt});
      }
    }
  }
  return out;
}

eval::EvalResult evaluate_model(detector::Detector<float>& model, const xray::LoadedDataset& data) {
  const auto dets = predict_dataset(model, data);
  return eval::evaluate(data.manifest, dets, eval::Task::box);
}

}  // namespace sda::train
