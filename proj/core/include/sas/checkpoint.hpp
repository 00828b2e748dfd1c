#pragma once

#include <string>

#include "sas/model.hpp"

namespace sas {

// Checkpoint file layout (all integers little-endian):
//   magic "SASCKPT1"
//   u64 config_text_len, config text (canonical key-sorted key=value lines)
//   u32 array_count
//   per array: u32 name_len, name, u32 ndim, i32 dims[ndim], u64 byte_offset
//   u64 payload_len, payload (raw little-endian float32)
// Round trips are bit-exact.

void save_checkpoint(const std::string& path, const std::string& config_text, ModelParams<float>& params);

struct LoadedCheckpoint {
    std::string config_text;
    ModelConfig config;
    ModelParams<float> params;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace sas
