#pragma once

#include <cstdint>
#include <string>

#include "tpvocc/nn.hpp"

namespace tpvocc {

// Binary checkpoint: parameters, Adam moments and the config snapshot.
// Doubles are stored raw (little-endian), so a reload reproduces forward
// outputs bit-identically.
struct CheckpointMeta {
  int epoch = 0;
  int64_t opt_step = 0;
  std::string role;
  std::string config_json;
};

void save_checkpoint(const std::string& path, const nn::ParamStore& params, nn::AdamW* opt,
                     const CheckpointMeta& meta);

// Loads parameter values into an already-constructed store (names and shapes
// must match) and, when given, the optimizer moments.
CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore& params, nn::AdamW* opt);

CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace tpvocc
