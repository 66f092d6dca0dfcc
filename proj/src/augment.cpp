#include "mcswin/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mcswin/error.hpp"
#include "mcswin/patch.hpp"
#include "mcswin/rng.hpp"

namespace mcswin {
namespace {

using Mat3 = std::array<double, 9>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

// Rotation about one axis in (z, y, x) coordinates.
Mat3 rotation(int axis, double deg) {
  const double r = deg * std::numbers::pi / 180.0;
  const double c = std::cos(r), s = std::sin(r);
  switch (axis) {
    case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
    case 1: return {c, 0, s, 0, 1, 0, -s, 0, c};
    default: return {c, -s, 0, s, c, 0, 0, 0, 1};
  }
}

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw ValidationError(std::string("augment range ") + name + " has lo > hi");
}

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    throw ValidationError(std::string("augment probability ") + name + " outside [0, 1]");
}

float sample_trilinear(const Volume& v, double z, double y, double x) {
  z = std::clamp(z, 0.0, double(v.shape.d - 1));
  y = std::clamp(y, 0.0, double(v.shape.h - 1));
  x = std::clamp(x, 0.0, double(v.shape.w - 1));
  const auto z0 = static_cast<std::int64_t>(std::floor(z));
  const auto y0 = static_cast<std::int64_t>(std::floor(y));
  const auto x0 = static_cast<std::int64_t>(std::floor(x));
  const auto z1 = std::min(z0 + 1, v.shape.d - 1);
  const auto y1 = std::min(y0 + 1, v.shape.h - 1);
  const auto x1 = std::min(x0 + 1, v.shape.w - 1);
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double c00 = lerp(v.at(z0, y0, x0), v.at(z0, y0, x1), fx);
  const double c01 = lerp(v.at(z0, y1, x0), v.at(z0, y1, x1), fx);
  const double c10 = lerp(v.at(z1, y0, x0), v.at(z1, y0, x1), fx);
  const double c11 = lerp(v.at(z1, y1, x0), v.at(z1, y1, x1), fx);
  return static_cast<float>(lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz));
}

std::uint8_t sample_nearest(const LabelMap& m, double z, double y, double x) {
  const auto zi = std::clamp<std::int64_t>(std::llround(z), 0, m.shape.d - 1);
  const auto yi = std::clamp<std::int64_t>(std::llround(y), 0, m.shape.h - 1);
  const auto xi = std::clamp<std::int64_t>(std::llround(x), 0, m.shape.w - 1);
  return m.at(zi, yi, xi);
}

// Coarse random displacement field, trilinearly upsampled on demand.
class ElasticField {
 public:
  ElasticField(Shape3 s, std::int64_t spacing, double max_disp, Rng& rng) : spacing_(double(spacing)) {
    n_ = {s.d / spacing + 2, s.h / spacing + 2, s.w / spacing + 2};
    disp_.resize(static_cast<std::size_t>(3 * n_[0] * n_[1] * n_[2]));
    for (auto& d : disp_) d = rng.uniform(-max_disp, max_disp);
  }

  std::array<double, 3> at(double z, double y, double x) const {
    const double g[3] = {z / spacing_, y / spacing_, x / spacing_};
    std::int64_t i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      i0[a] = std::min(static_cast<std::int64_t>(std::floor(g[a])), n_[a] - 2);
      f[a] = g[a] - double(i0[a]);
    }
    std::array<double, 3> out{};
    for (int c = 0; c < 8; ++c) {
      const int dz = (c >> 2) & 1, dy = (c >> 1) & 1, dx = c & 1;
      const double wgt = (dz ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dx ? f[2] : 1 - f[2]);
      const auto base = static_cast<std::size_t>(
          3 * (((i0[0] + dz) * n_[1] + (i0[1] + dy)) * n_[2] + (i0[2] + dx)));
      for (int a = 0; a < 3; ++a) out[a] += wgt * disp_[base + a];
    }
    return out;
  }

 private:
  double spacing_;
  std::array<std::int64_t, 3> n_{};
  std::vector<double> disp_;
};

template <typename MapFn>
std::pair<Volume, LabelMap> resample(const Volume& v, const LabelMap& m, MapFn&& source_of) {
  Volume vo(v.shape, v.spacing);
  LabelMap mo(m.shape, m.spacing);
  for (std::int64_t z = 0; z < v.shape.d; ++z)
    for (std::int64_t y = 0; y < v.shape.h; ++y)
      for (std::int64_t x = 0; x < v.shape.w; ++x) {
        const auto src = source_of(double(z), double(y), double(x));
        vo.at(z, y, x) = sample_trilinear(v, src[0], src[1], src[2]);
        mo.at(z, y, x) = sample_nearest(m, src[0], src[1], src[2]);
      }
  return {std::move(vo), std::move(mo)};
}

}  // namespace

AugmentConfig default_training_augment() {
  AugmentConfig c;
  c.p_scale = 0.3;
  c.p_shift = 0.3;
  c.p_crop = 0.0;
  c.p_affine = 0.2;
  c.p_elastic = 0.1;
  c.p_noise = 0.3;
  return c;
}

void validate(const AugmentConfig& c) {
  check_prob(c.p_scale, "p_scale");
  check_prob(c.p_shift, "p_shift");
  check_prob(c.p_crop, "p_crop");
  check_prob(c.p_affine, "p_affine");
  check_prob(c.p_elastic, "p_elastic");
  check_prob(c.p_noise, "p_noise");
  check_range(c.scale, "scale");
  check_range(c.shift, "shift");
  for (const auto& r : c.rotation_deg) check_range(r, "rotation_deg");
  check_range(c.zoom, "zoom");
  check_range(c.translation, "translation");
  if (!(c.zoom.lo > 0.0)) throw ValidationError("augment zoom must be positive");
  if (c.crop_margin < 0) throw ValidationError("augment crop_margin must be >= 0");
  if (c.elastic_grid_spacing < 1) throw ValidationError("augment elastic_grid_spacing must be >= 1");
  if (!(c.elastic_max_displacement >= 0.0))
    throw ValidationError("augment elastic_max_displacement must be >= 0");
  if (!(c.noise_stddev >= 0.0)) throw ValidationError("augment noise_stddev must be >= 0");
}

std::pair<Volume, LabelMap> resample_affine(const Volume& volume, const LabelMap& labels,
                                            const std::array<double, 9>& a,
                                            const std::array<double, 3>& t) {
  require_paired(volume, labels);
  const double c[3] = {(volume.shape.d - 1) / 2.0, (volume.shape.h - 1) / 2.0,
                       (volume.shape.w - 1) / 2.0};
  return resample(volume, labels, [&](double z, double y, double x) {
    const double p[3] = {z - c[0], y - c[1], x - c[2]};
    std::array<double, 3> s{};
    for (int i = 0; i < 3; ++i)
      s[i] = a[i * 3] * p[0] + a[i * 3 + 1] * p[1] + a[i * 3 + 2] * p[2] + c[i] + t[i];
    return s;
  });
}

std::pair<Volume, LabelMap> augment(const Volume& volume, const LabelMap& labels,
                                    const AugmentConfig& config, std::uint64_t seed) {
  validate(config);
  require_paired(volume, labels);
  Rng rng(seed);
  Volume v = volume;
  LabelMap m = labels;

  if (config.p_crop > 0.0) {
    const auto smallest = std::min({v.shape.d, v.shape.h, v.shape.w});
    if (2 * config.crop_margin >= smallest)
      throw ValidationError("crop margin must be below half the smallest dimension");
  }
  if (rng.bernoulli(config.p_crop)) {
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = rng.uniform_int(0, config.crop_margin);
      hi[a] = rng.uniform_int(0, config.crop_margin);
    }
    const Shape3 s{v.shape.d - lo[0] - hi[0], v.shape.h - lo[1] - hi[1], v.shape.w - lo[2] - hi[2]};
    v = crop(v, lo, s);
    m = crop(m, lo, s);
  }

  const bool do_affine = rng.bernoulli(config.p_affine);
  Mat3 a{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> t{};
  if (do_affine) {
    for (int axis = 0; axis < 3; ++axis)
      a = matmul(a, rotation(axis, rng.uniform(config.rotation_deg[axis].lo, config.rotation_deg[axis].hi)));
    const double zoom = rng.uniform(config.zoom.lo, config.zoom.hi);
    for (auto& e : a) e /= zoom;
    for (auto& e : t) e = rng.uniform(config.translation.lo, config.translation.hi);
  }
  const bool do_elastic = rng.bernoulli(config.p_elastic);
  if (do_elastic) {
    const ElasticField field(v.shape, config.elastic_grid_spacing, config.elastic_max_displacement, rng);
    const double c[3] = {(v.shape.d - 1) / 2.0, (v.shape.h - 1) / 2.0, (v.shape.w - 1) / 2.0};
    std::tie(v, m) = resample(v, m, [&](double z, double y, double x) {
      const double p[3] = {z - c[0], y - c[1], x - c[2]};
      const auto d = field.at(z, y, x);
      std::array<double, 3> s{};
      for (int i = 0; i < 3; ++i)
        s[i] = a[i * 3] * p[0] + a[i * 3 + 1] * p[1] + a[i * 3 + 2] * p[2] + c[i] + t[i] + d[i];
      return s;
    });
  } else if (do_affine) {
    std::tie(v, m) = resample_affine(v, m, a, t);
  }

  if (rng.bernoulli(config.p_scale)) {
    const auto f = static_cast<float>(rng.uniform(config.scale.lo, config.scale.hi));
    for (auto& x : v.data) x *= f;
  }
  if (rng.bernoulli(config.p_shift)) {
    const auto o = static_cast<float>(rng.uniform(config.shift.lo, config.shift.hi));
    for (auto& x : v.data) x += o;
  }
  if (rng.bernoulli(config.p_noise) && config.noise_stddev > 0.0) {
    for (auto& x : v.data) x += static_cast<float>(config.noise_stddev * rng.normal());
  }
  return {std::move(v), std::move(m)};
}

}  // namespace mcswin
