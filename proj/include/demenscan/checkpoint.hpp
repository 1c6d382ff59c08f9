#pragma once

#include <string>
#include <utility>

#include "demenscan/model.hpp"

namespace demenscan {

// Checkpoint container:
//   "DMSC" | u32 version | u32 json_len | spec json | float32 payload | u32 crc32
// All integers and floats little-endian; payload holds every parameter
// tensor in declared order; the CRC covers every preceding byte.
// save→load→save is byte-identical.

inline constexpr uint32_t kCheckpointVersion = 1;

void checkpoint_save(const ModelSpec& spec, const Parameters& params, const std::string& path);

std::pair<ModelSpec, Parameters> checkpoint_load(const std::string& path);

} // namespace demenscan
