#include "mcswin/phantom.hpp"

#include <cmath>
#include <string>

#include "mcswin/error.hpp"
#include "mcswin/rng.hpp"

namespace mcswin {
namespace {

struct Ellipsoid {
  double cz, cy, cx;
  double az, ay, ax;

  bool contains(double z, double y, double x) const {
    const double dz = (z - cz) / az, dy = (y - cy) / ay, dx = (x - cx) / ax;
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

struct Layout {
  double body_cy, body_cx, body_ay, body_ax;
  Ellipsoid lung_r, lung_l;
  double spine_cy, spine_cx, bone_radius;
  double eso_cy, eso_cx;
};

// Nominal layout with semi-axes scaled by (1 + j) and centres offset by j.
Layout make_layout(const PhantomSpec& s, double jz, double jy, double jx, double shift_r,
                   double shift_l) {
  const double d = double(s.shape.d), h = double(s.shape.h), w = double(s.shape.w);
  Layout l{};
  l.body_cy = h / 2.0;
  l.body_cx = w / 2.0;
  l.body_ay = 0.42 * h;
  l.body_ax = 0.46 * w;
  const double az = s.lung_semi_axes[0] * (1.0 + jz);
  const double ay = s.lung_semi_axes[1] * (1.0 + jy);
  const double ax = s.lung_semi_axes[2] * (1.0 + jx);
  const double offset = s.lung_semi_axes[2] + 0.1 * w;
  l.lung_r = {d / 2.0 + shift_r, h / 2.0 - 0.03 * h, w / 2.0 - offset, az, ay, ax};
  l.lung_l = {d / 2.0 + shift_l, h / 2.0 - 0.03 * h, w / 2.0 + offset, az, ay, ax};
  l.spine_cy = h / 2.0 + 0.28 * h;
  l.spine_cx = w / 2.0;
  l.bone_radius = s.cord_radius + 3.0;
  l.eso_cy = h / 2.0 + 0.12 * h;
  l.eso_cx = w / 2.0 + 0.03 * w;
  return l;
}

bool box_inside(double c, double r, std::int64_t n) { return c - r >= 0.0 && c + r <= double(n - 1); }

void check_fits(const PhantomSpec& s, const Layout& l) {
  auto fail = [](const std::string& what) {
    throw GenerationError("phantom structure does not fit inside shape: " + what);
  };
  for (const Ellipsoid* e : {&l.lung_r, &l.lung_l}) {
    if (!box_inside(e->cz, e->az, s.shape.d) || !box_inside(e->cy, e->ay, s.shape.h) ||
        !box_inside(e->cx, e->ax, s.shape.w))
      fail("lung");
  }
  if (l.lung_r.cx + l.lung_r.ax >= l.lung_l.cx - l.lung_l.ax) fail("lungs overlap");
  if (!box_inside(l.spine_cy, l.bone_radius, s.shape.h) ||
      !box_inside(l.spine_cx, l.bone_radius, s.shape.w))
    fail("vertebra");
  if (l.eso_cy + s.esophagus_radius >= l.spine_cy - l.bone_radius) fail("esophagus meets vertebra");
  if (s.tumor_radius_max + 1.0 >= std::min(s.lung_semi_axes[1], s.lung_semi_axes[2]))
    fail("tumour larger than lung");
}

}  // namespace

void validate(const PhantomSpec& s) {
  if (s.shape.d <= 0 || s.shape.h <= 0 || s.shape.w <= 0)
    throw ValidationError("phantom shape must be positive");
  if (!(s.spacing.z > 0 && s.spacing.y > 0 && s.spacing.x > 0))
    throw ValidationError("phantom spacing must be positive");
  for (double a : s.lung_semi_axes)
    if (!(a >= 1.0)) throw ValidationError("lung semi-axes must be >= 1 voxel");
  if (!(s.cord_radius >= 1.0) || !(s.esophagus_radius >= 1.0) || !(s.tumor_radius_min >= 1.0))
    throw ValidationError("structure radii must be >= 1 voxel");
  if (s.tumor_radius_max < s.tumor_radius_min)
    throw ValidationError("tumour radius range is empty");
  if (!(s.lung_jitter >= 0.0 && s.lung_jitter < 0.5))
    throw ValidationError("lung_jitter must lie in [0, 0.5)");
  if (!(s.noise_stddev >= 0.0)) throw ValidationError("noise_stddev must be >= 0");
  // Worst case: every jitter at its maximum.
  const double j = s.lung_jitter;
  const double dz = j * s.lung_semi_axes[0];
  check_fits(s, make_layout(s, j, j, j, dz, -dz));
  check_fits(s, make_layout(s, j, j, j, -dz, dz));
}

std::pair<Volume, LabelMap> generate_phantom(const PhantomSpec& s, std::uint64_t seed) {
  validate(s);
  Rng rng(seed);
  const double j = s.lung_jitter;
  const double jz = rng.uniform(-j, j), jy = rng.uniform(-j, j), jx = rng.uniform(-j, j);
  const double shift_r = rng.uniform(-j, j) * s.lung_semi_axes[0];
  const double shift_l = rng.uniform(-j, j) * s.lung_semi_axes[0];
  const Layout l = make_layout(s, jz, jy, jx, shift_r, shift_l);

  Volume vol(s.shape, s.spacing, 0.0f);
  LabelMap lab(s.shape, s.spacing, 0);
  // Per-voxel tissue class used for intensity: 0 air, 1 tissue, 2 bone, then labels.
  std::vector<std::uint8_t> tissue(static_cast<std::size_t>(s.shape.voxels()), 0);

  const double cord_r2 = s.cord_radius * s.cord_radius;
  const double bone_r2 = l.bone_radius * l.bone_radius;
  const double eso_r2 = s.esophagus_radius * s.esophagus_radius;
  for (std::int64_t z = 0; z < s.shape.d; ++z)
    for (std::int64_t y = 0; y < s.shape.h; ++y)
      for (std::int64_t x = 0; x < s.shape.w; ++x) {
        const auto i = lab.index(z, y, x);
        const double by = (y - l.body_cy) / l.body_ay, bx = (x - l.body_cx) / l.body_ax;
        if (by * by + bx * bx > 1.0) continue;  // air
        tissue[i] = 1;
        const double sy = y - l.spine_cy, sx = x - l.spine_cx;
        const double ey = y - l.eso_cy, ex = x - l.eso_cx;
        if (sy * sy + sx * sx <= cord_r2) {
          lab.data[i] = std::uint8_t(Structure::SpinalCord);
        } else if (sy * sy + sx * sx <= bone_r2) {
          tissue[i] = 2;
        } else if (ey * ey + ex * ex <= eso_r2) {
          lab.data[i] = std::uint8_t(Structure::Esophagus);
        } else if (l.lung_r.contains(z, y, x)) {
          lab.data[i] = std::uint8_t(Structure::LungR);
        } else if (l.lung_l.contains(z, y, x)) {
          lab.data[i] = std::uint8_t(Structure::LungL);
        }
      }

  // Tumour: a ball inside one lung.
  const bool right = rng.bernoulli(0.5);
  const Ellipsoid& host = right ? l.lung_r : l.lung_l;
  const auto host_label = std::uint8_t(right ? Structure::LungR : Structure::LungL);
  const double radius = rng.uniform(s.tumor_radius_min, s.tumor_radius_max);
  const auto ri = static_cast<std::int64_t>(std::floor(radius));
  bool placed = false;
  for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
    const auto cz = static_cast<std::int64_t>(std::lround(rng.uniform(host.cz - host.az, host.cz + host.az)));
    const auto cy = static_cast<std::int64_t>(std::lround(rng.uniform(host.cy - host.ay, host.cy + host.ay)));
    const auto cx = static_cast<std::int64_t>(std::lround(rng.uniform(host.cx - host.ax, host.cx + host.ax)));
    // The ball plus a one-voxel margin must be lung, so the tumour is surrounded by parenchyma.
    const double reach = radius + 1.0;
    bool ok = true;
    for (std::int64_t dz = -ri - 1; dz <= ri + 1 && ok; ++dz)
      for (std::int64_t dy = -ri - 1; dy <= ri + 1 && ok; ++dy)
        for (std::int64_t dx = -ri - 1; dx <= ri + 1 && ok; ++dx) {
          if (double(dz * dz + dy * dy + dx * dx) > reach * reach) continue;
          const auto z = cz + dz, y = cy + dy, x = cx + dx;
          if (z < 0 || y < 0 || x < 0 || z >= s.shape.d || y >= s.shape.h || x >= s.shape.w ||
              lab.at(z, y, x) != host_label)
            ok = false;
        }
    if (!ok) continue;
    for (std::int64_t dz = -ri; dz <= ri; ++dz)
      for (std::int64_t dy = -ri; dy <= ri; ++dy)
        for (std::int64_t dx = -ri; dx <= ri; ++dx)
          if (double(dz * dz + dy * dy + dx * dx) <= radius * radius)
            lab.at(cz + dz, cy + dy, cx + dx) = std::uint8_t(Structure::GTV);
    placed = true;
  }
  if (!placed) throw GenerationError("could not place tumour inside lung");

  const auto counts = class_counts(lab);
  const auto lung_min = std::min(counts[1], counts[2]);
  if (!(lung_min > counts[3] && counts[3] > counts[4] && counts[4] >= counts[5] && counts[5] > 0))
    throw GenerationError("phantom structure sizes violate lungs > cord > esophagus >= GTV > 0");

  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const StructureIntensity* si = nullptr;
    switch (static_cast<Structure>(lab.data[i])) {
      case Structure::LungR:
      case Structure::LungL: si = &s.lung; break;
      case Structure::SpinalCord: si = &s.cord; break;
      case Structure::Esophagus: si = &s.esophagus; break;
      case Structure::GTV: si = &s.tumor; break;
      case Structure::Background:
        si = tissue[i] == 0 ? &s.air : tissue[i] == 2 ? &s.bone : &s.tissue;
        break;
    }
    double v = si->mean;
    if (si->texture_stddev > 0.0) v += si->texture_stddev * rng.normal();
    if (s.noise_stddev > 0.0) v += s.noise_stddev * rng.normal();
    vol.data[i] = static_cast<float>(v);
  }
  return {std::move(vol), std::move(lab)};
}

}  // namespace mcswin
