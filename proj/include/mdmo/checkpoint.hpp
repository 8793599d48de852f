#pragma once

#include <cstdint>
#include <string>

#include "mdmo/config.hpp"
#include "mdmo/nets.hpp"

namespace mdmo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///   "MDMOCKPT", u32 version, u64 config length, config JSON,
///   u32 segment count, then per segment u32 name length, name, u32 rows,
///   u32 cols, rows*cols f64 values; finally the u64 FNV-1a hash of every
///   preceding byte.
struct Checkpoint {
  RunConfig config;
  Model model;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws kChecksum on a hash mismatch, kParse on malformed bytes and
/// kValidation when segments do not match the shapes the config implies.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t size);

}  // namespace mdmo
