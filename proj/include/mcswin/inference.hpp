#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mcswin/model.hpp"
#include "mcswin/uncertainty.hpp"

namespace mcswin {

/// Tile layout over a volume that is first padded symmetrically up to at least
/// the patch size. Starts advance by max(1, floor(patch * (1 - overlap))) and a
/// final tile is aligned to the far edge.
struct Tiling {
  Shape3 padded;
  std::array<std::int64_t, 3> pad_before{};
  std::vector<std::array<std::int64_t, 3>> origins;  // in padded coordinates
};

std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t patch, double overlap);
Tiling plan_tiles(Shape3 volume, Shape3 patch, double overlap);

/// Per-voxel head probabilities (6, D, H, W) averaged uniformly over every
/// covering tile. Padding uses the volume minimum and is cropped away.
/// `visit_order`, when given, is a permutation of tile indices.
torch::Tensor sliding_window_predict(const ModelState& state, const Volume& volume, Shape3 patch, double overlap,
                                     DropoutMode mode = DropoutMode::Off, torch::Generator* generator = nullptr,
                                     const std::vector<std::size_t>* visit_order = nullptr);

/// T sliding-window passes with dropout active; pass i draws its masks from
/// make_generator(derive_stream(seed, i)).
PredictionStack mc_predict(const ModelState& state, const Volume& volume, int samples, std::uint64_t seed,
                           Shape3 patch, double overlap);

}  // namespace mcswin
