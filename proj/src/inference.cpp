#include "mcswin/inference.hpp"

#include <algorithm>
#include <cmath>

#include "mcswin/error.hpp"
#include "mcswin/rng.hpp"

namespace mcswin {

std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t patch, double overlap) {
  if (patch < 1 || extent < patch) throw ValidationError("tile extent must be >= patch >= 1");
  const auto stride = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(double(patch) * (1.0 - overlap))));
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + patch < extent; s += stride) starts.push_back(s);
  if (starts.empty() || starts.back() != extent - patch) starts.push_back(extent - patch);
  return starts;
}

Tiling plan_tiles(Shape3 volume, Shape3 patch, double overlap) {
  if (!(overlap >= 0.0 && overlap <= 0.9)) throw ValidationError("overlap must lie in [0, 0.9]");
  if (volume.d < 1 || volume.h < 1 || volume.w < 1 || patch.d < 1 || patch.h < 1 || patch.w < 1)
    throw ValidationError("tiling extents must be positive");
  Tiling t;
  const std::int64_t v[3] = {volume.d, volume.h, volume.w};
  const std::int64_t p[3] = {patch.d, patch.h, patch.w};
  std::int64_t padded[3];
  std::vector<std::int64_t> starts[3];
  for (int a = 0; a < 3; ++a) {
    padded[a] = std::max(v[a], p[a]);
    t.pad_before[a] = (padded[a] - v[a]) / 2;
    starts[a] = tile_starts(padded[a], p[a], overlap);
  }
  t.padded = {padded[0], padded[1], padded[2]};
  for (auto z : starts[0])
    for (auto y : starts[1])
      for (auto x : starts[2]) t.origins.push_back({z, y, x});
  return t;
}

torch::Tensor sliding_window_predict(const ModelState& state, const Volume& volume, Shape3 patch, double overlap,
                                     DropoutMode mode, torch::Generator* generator,
                                     const std::vector<std::size_t>* visit_order) {
  validate(volume);
  using torch::indexing::Slice;
  const Tiling tiling = plan_tiles(volume.shape, patch, overlap);
  const auto dtype = state.net->parameters().front().dtype();

  auto image = to_tensor(volume).to(dtype);
  const Shape3 s = volume.shape;
  if (!(tiling.padded == s)) {
    const float fill = *std::min_element(volume.data.begin(), volume.data.end());
    const auto& b = tiling.pad_before;
    image = torch::constant_pad_nd(image,
                                   {b[2], tiling.padded.w - s.w - b[2], b[1], tiling.padded.h - s.h - b[1], b[0],
                                    tiling.padded.d - s.d - b[0]},
                                   fill);
  }

  std::vector<std::size_t> order(tiling.origins.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (visit_order) {
    auto sorted = *visit_order;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != order) throw ValidationError("visit_order must be a permutation of the tiles");
    order = *visit_order;
  }

  torch::NoGradGuard no_grad;
  auto sum = torch::zeros({kNumClasses, tiling.padded.d, tiling.padded.h, tiling.padded.w}, dtype);
  auto count = torch::zeros({1, tiling.padded.d, tiling.padded.h, tiling.padded.w}, dtype);
  for (auto i : order) {
    const auto& o = tiling.origins[i];
    const Slice sz(o[0], o[0] + patch.d), sy(o[1], o[1] + patch.h), sx(o[2], o[2] + patch.w);
    auto tile = image.index({Slice(), Slice(), sz, sy, sx});
    auto probs = head_probabilities(forward(state, tile, mode, generator), state.config.head, 1).squeeze(0);
    sum.index({Slice(), sz, sy, sx}).add_(probs);
    count.index({Slice(), sz, sy, sx}).add_(1.0);
  }
  auto avg = sum / count;
  const auto& b = tiling.pad_before;
  return avg.index({Slice(), Slice(b[0], b[0] + s.d), Slice(b[1], b[1] + s.h), Slice(b[2], b[2] + s.w)}).contiguous();
}

PredictionStack mc_predict(const ModelState& state, const Volume& volume, int samples, std::uint64_t seed,
                           Shape3 patch, double overlap) {
  if (samples < 1) throw ValidationError("MC sample count must be >= 1");
  PredictionStack stack;
  for (int i = 0; i < samples; ++i) {
    auto gen = make_generator(derive_stream(seed, static_cast<std::uint64_t>(i)));
    auto probs = sliding_window_predict(state, volume, patch, overlap, DropoutMode::On, &gen);
    stack.samples.push_back(argmax_labels(probs, volume.spacing));
  }
  return stack;
}

}  // namespace mcswin
