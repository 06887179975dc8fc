#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chardiff/adamw.hpp"
#include "chardiff/tensor.hpp"

namespace chardiff::cli {

// Binary checkpoint: magic "CHDF", u32 version, embedded config snapshot,
// named-tensor index, little-endian f32 blobs, trailing CRC32. Round-trips
// bit-exactly.
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_json;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParamList<float>& params);

// Throws DataError on truncation, bad magic, or checksum mismatch.
Checkpoint load_checkpoint(const std::string& path);

// Overwrites params (matched by name) from the checkpoint; every parameter
// must be present with an identical shape.
void apply_checkpoint(const Checkpoint& ckpt, ParamList<float>& params);

uint32_t crc32(const uint8_t* data, size_t n);

}  // namespace chardiff::cli
