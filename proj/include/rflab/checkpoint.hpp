#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "rflab/array.hpp"

#include <json.hpp>

namespace rflab {

// Raised for malformed checkpoint files; offset is the byte position of the
// first problem.
struct CheckpointError : std::runtime_error {
  std::size_t offset;
  CheckpointError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (byte " + std::to_string(off) + ")"), offset(off) {}
};

struct Checkpoint {
  ParamSet params;
  nlohmann::json metadata;
};

// Binary layout, all little-endian: "RFL1", u32 tensor count, then per tensor
// u32 name length + name bytes, u32 rank, u64 dims, raw float64 data; finally
// u32 metadata length + UTF-8 JSON.
void save_checkpoint(const std::string& path, const ParamSet& params,
                     const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rflab
