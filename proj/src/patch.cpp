#include "mcswin/patch.hpp"

#include <algorithm>

#include "mcswin/error.hpp"
#include "mcswin/rng.hpp"

namespace mcswin {

std::array<std::int64_t, 3> sample_patch_origin(const LabelMap& labels, Shape3 patch,
                                                std::uint64_t seed, double fg_bias) {
  const Shape3 s = labels.shape;
  if (patch.d <= 0 || patch.h <= 0 || patch.w <= 0)
    throw ValidationError("patch shape must be positive");
  if (patch.d > s.d || patch.h > s.h || patch.w > s.w)
    throw ValidationError("patch shape exceeds volume shape");
  if (!(fg_bias >= 0.0 && fg_bias <= 1.0)) throw ValidationError("fg_bias must lie in [0, 1]");

  Rng rng(seed);
  const bool want_fg = rng.uniform() < fg_bias;
  if (want_fg) {
    std::int64_t n_fg = 0;
    for (auto v : labels.data) n_fg += v != 0;
    if (n_fg > 0) {
      auto pick = rng.uniform_int(0, n_fg - 1);
      std::size_t idx = 0;
      for (; idx < labels.data.size(); ++idx)
        if (labels.data[idx] != 0 && pick-- == 0) break;
      const auto i = static_cast<std::int64_t>(idx);
      const std::int64_t c[3] = {i / (s.h * s.w), (i / s.w) % s.h, i % s.w};
      const std::int64_t p[3] = {patch.d, patch.h, patch.w};
      const std::int64_t n[3] = {s.d, s.h, s.w};
      std::array<std::int64_t, 3> origin{};
      for (int a = 0; a < 3; ++a) origin[a] = std::clamp(c[a] - p[a] / 2, std::int64_t{0}, n[a] - p[a]);
      return origin;
    }
  }
  return {rng.uniform_int(0, s.d - patch.d), rng.uniform_int(0, s.h - patch.h),
          rng.uniform_int(0, s.w - patch.w)};
}

std::pair<Volume, LabelMap> extract_patch(const Volume& volume, const LabelMap& labels, Shape3 patch,
                                          std::uint64_t seed, double fg_bias) {
  require_paired(volume, labels);
  const auto origin = sample_patch_origin(labels, patch, seed, fg_bias);
  return {crop(volume, origin, patch), crop(labels, origin, patch)};
}

}  // namespace mcswin
