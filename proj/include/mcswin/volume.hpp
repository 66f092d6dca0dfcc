#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mcswin {

inline constexpr int kNumClasses = 6;

/// Label values. Patient-right lung sits at low x (radiological convention).
enum class Structure : std::uint8_t {
  Background = 0,
  LungR = 1,
  LungL = 2,
  SpinalCord = 3,
  Esophagus = 4,
  GTV = 5,
};

/// Display names in report order (foreground classes 1..5).
std::string_view structure_name(int label);

struct Shape3 {
  std::int64_t d = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t voxels() const { return d * h * w; }
  bool operator==(const Shape3&) const = default;
};

/// Physical voxel size in millimetres, ordered (z, y, x) like the shape.
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  bool operator==(const Spacing&) const = default;
};

struct IntensityTag {};
struct LabelTag {};
struct CountTag {};

/// Dense 3D grid stored z-major: index = (z * h + y) * w + x.
template <typename T, typename Tag>
struct Grid {
  using value_type = T;

  Shape3 shape;
  Spacing spacing;
  std::vector<T> data;

  Grid() = default;
  Grid(Shape3 s, Spacing sp, T fill = T{})
      : shape(s), spacing(sp), data(static_cast<std::size_t>(s.voxels()), fill) {}

  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>((z * shape.h + y) * shape.w + x);
  }
  T& at(std::int64_t z, std::int64_t y, std::int64_t x) { return data[index(z, y, x)]; }
  const T& at(std::int64_t z, std::int64_t y, std::int64_t x) const { return data[index(z, y, x)]; }

  bool operator==(const Grid&) const = default;
};

/// CT-like intensity volume (f32).
using Volume = Grid<float, IntensityTag>;
/// Class labels in 0..5.
using LabelMap = Grid<std::uint8_t, LabelTag>;
/// Unconstrained small counts (MC agreement grids).
using CountMap = Grid<std::uint8_t, CountTag>;

/// Throws ValidationError unless shape/spacing are positive, the payload size
/// matches, and every value is finite.
void validate(const Volume& v);
/// As above, plus every label in 0..5.
void validate(const LabelMap& m);
void validate(const CountMap& m);

/// Throws ValidationError unless shape and spacing agree.
void require_paired(const Volume& v, const LabelMap& m);

std::array<std::int64_t, kNumClasses> class_counts(const LabelMap& m);

}  // namespace mcswin
