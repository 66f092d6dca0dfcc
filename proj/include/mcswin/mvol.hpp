#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "mcswin/volume.hpp"

namespace mcswin {

// .mvol layout (little-endian):
//   "MVOL" | u32 version=1 | u8 dtype | u32 D,H,W | f64 sz,sy,sx | voxels (z-major)
// dtype 0 = f32 intensity, 1 = u8 label (0..5), 2 = u8 count (no range check).

inline constexpr std::uint32_t kMvolVersion = 1;
inline constexpr std::size_t kMvolHeaderBytes = 4 + 4 + 1 + 3 * 4 + 3 * 8;

enum class MvolType : std::uint8_t { Intensity = 0, Label = 1, Count = 2 };

using AnyGrid = std::variant<Volume, LabelMap, CountMap>;

void write_volume(const std::string& path, const Volume& v);
void write_volume(const std::string& path, const LabelMap& m);
void write_volume(const std::string& path, const CountMap& m);

/// Reads any .mvol. FormatError on bad magic/version, CorruptionError on
/// truncation or trailing bytes, ValidationError on bad dtype/values/geometry.
AnyGrid read_volume(const std::string& path);

/// Typed readers; ValidationError if the file holds another dtype.
Volume read_intensity(const std::string& path);
LabelMap read_labels(const std::string& path);
CountMap read_counts(const std::string& path);

}  // namespace mcswin
