#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "mcswin/error.hpp"
#include "mcswin/volume.hpp"

namespace mcswin {

/// Sub-block copy; origin + shape must lie inside the grid.
template <typename G>
G crop(const G& g, const std::array<std::int64_t, 3>& origin, Shape3 shape) {
  G out(shape, g.spacing);
  for (std::int64_t z = 0; z < shape.d; ++z)
    for (std::int64_t y = 0; y < shape.h; ++y)
      for (std::int64_t x = 0; x < shape.w; ++x)
        out.at(z, y, x) = g.at(origin[0] + z, origin[1] + y, origin[2] + x);
  return out;
}

/// Lossless rotation by k*90 degrees about `axis` (0 = z, 1 = y, 2 = x).
/// The rotation plane must be square.
template <typename G>
G rotate90(const G& g, int axis, int k) {
  k = ((k % 4) + 4) % 4;
  G out(g.shape, g.spacing);
  const std::int64_t n[3] = {g.shape.d, g.shape.h, g.shape.w};
  // Plane axes (a, b); rotation maps (a, b) -> (b, n - 1 - a) once per step.
  const int a = axis == 0 ? 1 : 0;
  const int b = axis == 2 ? 1 : 2;
  if (axis < 0 || axis > 2) throw ValidationError("rotation axis must be 0, 1 or 2");
  if (n[a] != n[b]) throw ValidationError("rotation plane must be square");
  for (std::int64_t z = 0; z < n[0]; ++z)
    for (std::int64_t y = 0; y < n[1]; ++y)
      for (std::int64_t x = 0; x < n[2]; ++x) {
        std::int64_t p[3] = {z, y, x};
        for (int s = 0; s < k; ++s) {
          const std::int64_t pa = p[a], pb = p[b];
          p[a] = pb;
          p[b] = n[a] - 1 - pa;
        }
        out.at(p[0], p[1], p[2]) = g.at(z, y, x);
      }
  return out;
}

/// Picks a patch origin. With probability fg_bias the patch is centred on a
/// uniformly drawn foreground voxel (label >= 1), clamped to stay inside;
/// otherwise the origin is uniform over all valid positions.
std::array<std::int64_t, 3> sample_patch_origin(const LabelMap& labels, Shape3 patch,
                                                std::uint64_t seed, double fg_bias);

/// Crops a paired patch at sample_patch_origin(...). ValidationError if the
/// patch exceeds the volume on any axis.
std::pair<Volume, LabelMap> extract_patch(const Volume& volume, const LabelMap& labels, Shape3 patch,
                                          std::uint64_t seed, double fg_bias);

}  // namespace mcswin
