#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ace/params.hpp"

namespace ace {

// Binary layout (all integers and floats little-endian):
//   "ACECKPT\0"                   8-byte magic
//   u32 version (= 1), u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank], u64 offset
//   payload: float64 values; each tensor starts `offset` values into the payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace ace
