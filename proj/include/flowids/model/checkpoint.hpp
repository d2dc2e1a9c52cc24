#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "flowids/nn/adam.hpp"
#include "flowids/tensor.hpp"

namespace flowids::model {

// Versioned binary container shared by the classifier and GAN checkpoints:
// magic bytes, format version, a JSON header (kind, seed, free-form meta,
// tensor manifest, optimizer states), little-endian 64-bit float parameter
// blocks in manifest order, then a CRC-32 of all preceding bytes.
inline constexpr char kCheckpointMagic[4] = {'F', 'W', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct MomentPair {
  std::string name;
  Tensor m;
  Tensor v;
};

struct OptimizerStateBlob {
  std::string name;
  nn::AdamConfig config;
  std::int64_t t = 0;
  std::vector<MomentPair> moments;
};

struct CheckpointData {
  std::string kind;
  std::uint64_t seed = 0;
  std::string meta_json;  // serialized JSON object (config, history, ...)
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<OptimizerStateBlob> optimizers;
};

void save_checkpoint(const std::filesystem::path& path,
                     const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace flowids::model
