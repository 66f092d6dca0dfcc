#pragma once

#include <string>

#include "mcswin/model.hpp"

namespace mcswin {

// Checkpoint layout (little-endian):
//   "MCKP" | u32 version=1 | str model-config JSON | str metadata JSON |
//   u32 tensor count | per tensor: str name, u8 dtype (0 = f32), u32 ndim,
//   u64 dims..., raw f32 payload | u64 FNV-1a of every preceding byte.
// str = u64 length + bytes.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelState& state, const std::string& path);

/// FormatError on bad magic/version, CorruptionError on truncation, checksum
/// failure or a parameter set that does not match the stored config.
ModelState load_checkpoint(const std::string& path);

/// As above, then CheckpointMismatchError unless the stored config equals
/// `expected` exactly.
ModelState load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace mcswin
