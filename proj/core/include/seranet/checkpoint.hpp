#pragma once

#include <filesystem>
#include <string>

#include "seranet/network.hpp"

namespace seranet {

// Binary layout, all integers little-endian:
//   magic "SRNCKPT1"
//   u32 format version
//   u64 config length, config JSON bytes (ModelConfig)
//   u32 parameter count, then per parameter:
//     u32 name length, name bytes, u32 rank, i64 dims[rank], f32 data
//   u64 FNV-1a checksum of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, Network& net);

/// Reads the stored config only.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

/// Builds a network from the stored config and fills in its parameters.
/// Throws IoError on a bad magic, version, or checksum.
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace seranet
