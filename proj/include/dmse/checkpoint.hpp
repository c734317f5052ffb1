#pragma once

// Binary model checkpoint.
//
//   "DMSE"                        4 bytes
//   version                       u16
//   n, m, d1, d2                  u32 each
//   layer count L, layer dims     u32, L x u32
//   species names, feature names  per name: u32 byte length + UTF-8 bytes
//   feature mean, feature scale   m x f64 each
//   S, Lambda, W                  f64, row-major
//   per layer: weight, bias       f64, row-major
//   CRC32 of everything above     u32
//
// All integers and floats little-endian.

#include "dmse/core.hpp"
#include "dmse/model.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace dmse {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CorruptCheckpoint : Error {
  using Error::Error;
};

std::string serialize_checkpoint(const ModelParams& params);
ModelParams parse_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dmse
