#include "mcswin/model_config.hpp"

#include "mcswin/error.hpp"

namespace mcswin {

std::array<std::int64_t, 3> ModelConfig::stage_grid(const std::array<std::int64_t, 3>& shape,
                                                   int stage) const {
  std::array<std::int64_t, 3> g{};
  for (int a = 0; a < 3; ++a) g[a] = (shape[a] / patch_size[a]) >> stage;
  return g;
}

std::array<int, 3> ModelConfig::input_multiple() const {
  std::array<int, 3> m{};
  for (int a = 0; a < 3; ++a) m[a] = patch_size[a] << (stages() - 1);
  return m;
}

void validate(const ModelConfig& c) {
  if (c.in_channels < 1) throw ValidationError("model.in_channels must be >= 1");
  if (c.num_classes != kNumClasses) throw ValidationError("model.num_classes must be 6");
  if (c.embed_dim < 1) throw ValidationError("model.embed_dim must be >= 1");
  if (c.depths.empty() || c.depths.size() > 4) throw ValidationError("model needs 1..4 encoder stages");
  if (c.heads.size() != c.depths.size()) throw ValidationError("model.heads must match model.depths");
  for (int s = 0; s < c.stages(); ++s) {
    if (c.depths[s] < 1) throw ValidationError("model.depths entries must be >= 1");
    if (c.heads[s] < 1) throw ValidationError("model.heads entries must be >= 1");
    if (c.stage_dim(s) % c.heads[s] != 0)
      throw ValidationError("stage " + std::to_string(s) + " width " + std::to_string(c.stage_dim(s)) +
                            " is not divisible by " + std::to_string(c.heads[s]) + " heads");
  }
  for (int a = 0; a < 3; ++a) {
    if (c.patch_size[a] < 1) throw ValidationError("model.patch_size must be >= 1");
    if (c.window[a] < 1) throw ValidationError("model.window must be >= 1");
  }
  if (!(c.mlp_ratio > 0.0) || c.mlp_hidden(0) < 1) throw ValidationError("model.mlp_ratio too small");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ValidationError("model.dropout must lie in [0, 1)");
  validate_input_shape(c, {c.input_shape[0], c.input_shape[1], c.input_shape[2]});
}

void validate_input_shape(const ModelConfig& c, const std::array<std::int64_t, 3>& shape) {
  const auto m = c.input_multiple();
  for (int a = 0; a < 3; ++a)
    if (shape[a] < m[a] || shape[a] % m[a] != 0)
      throw ValidationError("input extent " + std::to_string(shape[a]) + " is not a positive multiple of " +
                            std::to_string(m[a]) + " (patch size x 2^(stages-1))");
}

bool encoder_compatible(const ModelConfig& a, const ModelConfig& b) {
  return a.in_channels == b.in_channels && a.patch_size == b.patch_size && a.embed_dim == b.embed_dim &&
         a.depths == b.depths && a.heads == b.heads && a.window == b.window && a.mlp_ratio == b.mlp_ratio;
}

}  // namespace mcswin
