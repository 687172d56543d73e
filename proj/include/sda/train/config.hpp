#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sda/detector/model.hpp"

namespace sda::train {

struct OptimizerConfig {
  std::string name = "sgd";
  double lr = 0.0025;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 2;
  double grad_clip_norm = 10.0;  // global L2 norm; 0 disables
};

struct ScheduleConfig {
  std::size_t epochs = 20;
  std::vector<std::size_t> lr_decay_steps;  // epochs (1-based) after which lr is multiplied
  double lr_decay_factor = 0.1;
  std::size_t warmup_steps = 0;             // linear ramp over the first optimizer steps
  std::size_t eval_every = 1;               // 0 evaluates after the final epoch only
  std::size_t checkpoint_keep = 0;          // 0 keeps every epoch checkpoint
};

struct NeckToggles {
  bool use_sca = true;
  bool use_ssa = true;
  bool use_dr = true;
  bool share_weights = false;
  /// Skip the neck call altogether, feeding backbone levels to the head.
  bool plain_pyramid = false;
};

struct DataConfig {
  std::string root;  // contains train/, easy/, hard/, hidden/
  std::string train_split = "train";
  std::vector<std::string> eval_splits{"hidden"};
  std::size_t max_train_images = 0;  // 0 uses every image
  std::size_t max_eval_images = 0;
};

struct AblationConfig {
  std::vector<std::string> rows;           // empty runs all five
  std::vector<std::uint64_t> seeds;        // empty uses the run seed
  std::string split = "hidden";
};

struct TrainConfig {
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  NeckToggles neck;
  DataConfig data;
  AblationConfig ablation;
  std::uint64_t seed = 0;
  std::size_t image_size = 128;
  std::size_t num_classes = 3;
  bool augment_hflip = true;
  double score_thresh = 0.05;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  /// Learning rate for a 1-based epoch and a 0-based global step.
  double lr_at(std::size_t epoch, std::size_t step) const;
  detector::DetectorConfig detector_config() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Unknown keys are rejected so typos surface as ConfigError.
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig load_train_config(const std::string& path);

}  // namespace sda::train
