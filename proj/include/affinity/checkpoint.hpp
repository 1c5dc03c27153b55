#pragma once

#include <cstdint>
#include <string>

#include "affinity/model.hpp"
#include "affinity/train.hpp"

namespace affinity {

// A trained model with everything needed to reproduce or reuse it. The file
// format is a u64 little-endian manifest length, a JSON manifest (configs,
// metadata, tensor names/shapes/offsets, format version), then the raw
// little-endian f32 buffers in manifest order. Save -> load round trips are
// bitwise exact on parameter data.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  Parameters params;
  int fold = -1;
  int epoch = 0;
  uint64_t seed = 0;
};

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(Checkpoint& cp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace affinity
