#include "mcswin/volume.hpp"

#include <cmath>
#include <string>

#include "mcswin/error.hpp"

namespace mcswin {

std::string_view structure_name(int label) {
  switch (label) {
    case 0: return "Background";
    case 1: return "Lung R";
    case 2: return "Lung L";
    case 3: return "Spinal Cord";
    case 4: return "Esophagus";
    case 5: return "GTV";
    default: return "?";
  }
}

namespace {

template <typename G>
void validate_geometry(const G& g) {
  if (g.shape.d <= 0 || g.shape.h <= 0 || g.shape.w <= 0)
    throw ValidationError("grid shape must be positive");
  if (!(g.spacing.z > 0 && g.spacing.y > 0 && g.spacing.x > 0) || !std::isfinite(g.spacing.z) ||
      !std::isfinite(g.spacing.y) || !std::isfinite(g.spacing.x))
    throw ValidationError("grid spacing must be positive and finite");
  if (g.data.size() != static_cast<std::size_t>(g.shape.voxels()))
    throw ValidationError("grid payload size " + std::to_string(g.data.size()) +
                          " does not match shape");
}

}  // namespace

void validate(const Volume& v) {
  validate_geometry(v);
  for (float x : v.data)
    if (!std::isfinite(x)) throw ValidationError("volume contains non-finite values");
}

void validate(const LabelMap& m) {
  validate_geometry(m);
  for (auto x : m.data)
    if (x >= kNumClasses)
      throw ValidationError("label value " + std::to_string(int(x)) + " outside 0..5");
}

void validate(const CountMap& m) { validate_geometry(m); }

void require_paired(const Volume& v, const LabelMap& m) {
  if (!(v.shape == m.shape)) throw ValidationError("volume and label map shapes differ");
  if (!(v.spacing == m.spacing)) throw ValidationError("volume and label map spacings differ");
}

std::array<std::int64_t, kNumClasses> class_counts(const LabelMap& m) {
  std::array<std::int64_t, kNumClasses> counts{};
  for (auto x : m.data)
    if (x < kNumClasses) ++counts[x];
  return counts;
}

}  // namespace mcswin
