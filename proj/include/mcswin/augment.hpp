#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "mcswin/volume.hpp"

namespace mcswin {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Randomised training transforms. Each transform fires independently with
/// its own probability. Geometric transforms (crop, affine, elastic) share
/// sampled parameters between image and labels; intensity transforms touch
/// the image only.
struct AugmentConfig {
  double p_scale = 0.0;
  Range scale{0.9, 1.1};       // multiplicative factor
  double p_shift = 0.0;
  Range shift{-0.1, 0.1};      // additive offset
  double p_crop = 0.0;
  std::int64_t crop_margin = 4;  // max voxels removed per side
  double p_affine = 0.0;
  std::array<Range, 3> rotation_deg{{{-10.0, 10.0}, {-10.0, 10.0}, {-10.0, 10.0}}};  // about z, y, x
  Range zoom{0.9, 1.1};             // isotropic
  Range translation{-2.0, 2.0};     // voxels, per axis
  double p_elastic = 0.0;
  std::int64_t elastic_grid_spacing = 16;  // control point spacing, voxels
  double elastic_max_displacement = 2.0;   // voxels
  double p_noise = 0.0;
  double noise_stddev = 0.02;
};

/// Training defaults with every transform enabled at modest strength.
AugmentConfig default_training_augment();

void validate(const AugmentConfig& c);

/// Pure function of the inputs and seed. Boundary cropping shrinks the output
/// grid; all other transforms preserve shape. Label values stay in 0..5.
std::pair<Volume, LabelMap> augment(const Volume& volume, const LabelMap& labels,
                                    const AugmentConfig& config, std::uint64_t seed);

/// Resamples with an explicit 3x3 linear map about the grid centre plus a
/// translation (voxels): source = A * (p - c) + c + t. Intensities trilinear,
/// labels nearest neighbour, both clamped at the border.
std::pair<Volume, LabelMap> resample_affine(const Volume& volume, const LabelMap& labels,
                                            const std::array<double, 9>& a,
                                            const std::array<double, 3>& t);

}  // namespace mcswin
