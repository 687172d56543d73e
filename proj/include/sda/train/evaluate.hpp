#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sda/detector/model.hpp"
#include "sda/eval/coco_eval.hpp"
#include "sda/xray/dataset.hpp"

namespace sda::train {

/// In-memory dataset with the manifest that export_dataset would write.
xray::LoadedDataset make_dataset(std::vector<xray::SceneRecord> records, const std::vector<xray::ItemClass>& classes);

/// Concatenates datasets with image and annotation ids renumbered from 1 in
/// input order. Category lists must agree.
xray::LoadedDataset merge_splits(const std::vector<const xray::LoadedDataset*>& parts);

/// The first `n` images and their annotations; n = 0 keeps everything.
xray::LoadedDataset take_first(const xray::LoadedDataset& data, std::size_t n);

/// Loads `root/<split>`; "overall" is the union of easy, hard and hidden.
xray::LoadedDataset load_split(const std::filesystem::path& root, const std::string& split);

/// Inference over every image in manifest order.
std::vector<eval::EvalDetection> predict_dataset(detector::Detector<float>& model, const xray::LoadedDataset& data,
                                                 std::size_t batch_size = 8);

eval::EvalResult evaluate_model(detector::Detector<float>& model, const xray::LoadedDataset& data);

}  // namespace sda::train
