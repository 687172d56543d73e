#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sda/detector/model.hpp"
#include "sda/errors.hpp"
#include "sda/eval/coco_eval.hpp"
#include "sda/train/config.hpp"
#include "sda/xray/dataset.hpp"

namespace sda::train {

struct NamedSplit {
  std::string name;
  xray::LoadedDataset data;
};

struct TrainData {
  xray::LoadedDataset train;
  std::vector<NamedSplit> eval;  // config order

  const xray::LoadedDataset& split(const std::string& name) const;
};

/// Loads the training split and every evaluation split named by the config,
/// plus `extra` splits, truncated to the configured image limits.
TrainData load_train_data(const TrainConfig& cfg, const std::vector<std::string>& extra = {});

struct SplitMetrics {
  std::string split;
  eval::EvalSummary box;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double lr = 0.0;
  std::vector<SplitMetrics> evals;  // empty on epochs without evaluation
};

/// Non-finite loss during training. The run directory receives divergence.json.
class DivergenceError : public ValueError {
 public:
  DivergenceError(const std::string& what, std::uint64_t batch_seed) : ValueError(what), batch_seed_(batch_seed) {}
  std::uint64_t batch_seed() const { return batch_seed_; }

 private:
  std::uint64_t batch_seed_;
};

struct TrainOptions {
  /// Continue from the newest checkpoint in the run directory when present.
  bool resume = false;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Test hook: replaces the loss value of each batch before the finiteness check.
  std::function<double(std::size_t epoch, std::size_t step, double loss)> loss_filter;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  detector::Detector<float> model;
};

const std::string& metrics_header();
std::string metrics_rows(const EpochRecord& r);

/// Seeded single-threaded SGD. Writes config.json, metrics.csv,
/// checkpoints/epoch_NNN.sdck each epoch and final.sdck under `run_dir`.
TrainResult train(const TrainConfig& cfg, const TrainData& data, const std::filesystem::path& run_dir,
                  const TrainOptions& opts = {});

/// Horizontal mirror of a [B,3,H,W] batch element and its boxes.
void flip_horizontal(Tensor<float>& images, std::size_t b, std::vector<detector::GtBox>& boxes);

}  // namespace sda::train
