#pragma once

#include <cstdint>
#include <utility>

#include "mcswin/volume.hpp"

namespace mcswin {

struct StructureIntensity {
  double mean = 0.0;
  double texture_stddev = 0.0;
};

/// Parametric thoracic phantom: body cylinder, two lung ellipsoids, a vertebral
/// ring around the spinal cord, an esophagus tube, and a tumour blob inside one
/// lung. Lengths are in voxels.
struct PhantomSpec {
  Shape3 shape{64, 64, 64};
  Spacing spacing{3.0, 1.7, 1.7};

  std::array<double, 3> lung_semi_axes{22.0, 15.0, 10.0};  // (z, y, x)
  double lung_jitter = 0.1;  // relative jitter of semi-axes and centres
  double cord_radius = 3.0;
  double esophagus_radius = 2.0;
  double tumor_radius_min = 2.0;
  double tumor_radius_max = 4.0;

  StructureIntensity air{-1.0, 0.0};
  StructureIntensity tissue{0.0, 0.0};
  StructureIntensity bone{0.9, 0.0};
  StructureIntensity lung{-0.7, 0.0};
  StructureIntensity cord{0.35, 0.0};
  StructureIntensity esophagus{0.2, 0.0};
  StructureIntensity tumor{0.3, 0.0};
  double noise_stddev = 0.05;
};

/// Throws ValidationError for non-positive radii or an empty tumour range and
/// GenerationError for structures that cannot fit inside the shape.
void validate(const PhantomSpec& spec);

/// Pure function of (spec, seed). Guarantees all six classes are present with
/// min(lung R, lung L) > cord > esophagus >= GTV > 0; otherwise GenerationError.
std::pair<Volume, LabelMap> generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

}  // namespace mcswin
