#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sda/detector/model.hpp"
#include "sda/tensor/sdat.hpp"
#include "sda/train/config.hpp"
#include "sda/train/sgd.hpp"

namespace sda::train {

// Archive layout (little endian):
//   "SDCK" | version u8 (1) | u64 meta length | meta JSON |
//   u64 tensor count | per tensor: u32 name length | name | u64 blob length | SDAT blob

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, AnyTensor>> tensors;  // archive order
  nlohmann::json meta = nlohmann::json::object();           // config, epoch, rng_state

  const AnyTensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ck);
/// Throws IoError on a bad magic, version or truncated payload.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters under their visit names, momentum buffers under "optim.momentum.<name>".
Checkpoint make_checkpoint(detector::Detector<float>& model, const TrainConfig& cfg, std::size_t epoch,
                           const Sgd<float>* opt, const std::string& rng_state);

/// Overwrites every model parameter from the archive; a missing name or a
/// shape mismatch throws ConfigError.
void load_parameters(detector::Detector<float>& model, const Checkpoint& ck);

/// Rebuilds the model from the stored config and loads its parameters.
detector::Detector<float> restore_detector(const Checkpoint& ck);
TrainConfig checkpoint_config(const Checkpoint& ck);

void restore_optimizer(Sgd<float>& opt, detector::Detector<float>& model, const Checkpoint& ck);

}  // namespace sda::train
