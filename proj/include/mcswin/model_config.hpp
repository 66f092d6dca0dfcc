#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcswin/volume.hpp"

namespace mcswin {

enum class HeadActivation { Sigmoid, Softmax };

/// Architecture of the Swin U-Net. Toy-scale defaults; the reference scale is
/// embed_dim 48 with 96^3 input.
struct ModelConfig {
  int in_channels = 1;
  int num_classes = kNumClasses;
  std::array<int, 3> patch_size{2, 2, 2};
  int embed_dim = 12;
  std::vector<int> depths{2, 2, 2, 2};
  std::vector<int> heads{3, 6, 12, 24};
  std::array<int, 3> window{4, 4, 4};
  double mlp_ratio = 4.0;
  double dropout = 0.5;
  std::array<int, 3> input_shape{32, 32, 32};
  HeadActivation head = HeadActivation::Sigmoid;

  int stages() const { return static_cast<int>(depths.size()); }
  int stage_dim(int stage) const { return embed_dim << stage; }
  int mlp_hidden(int stage) const { return static_cast<int>(stage_dim(stage) * mlp_ratio); }
  /// Token grid extent of `stage` for an input of `shape`.
  std::array<std::int64_t, 3> stage_grid(const std::array<std::int64_t, 3>& shape, int stage) const;
  /// Multiple every input extent must be divisible by.
  std::array<int, 3> input_multiple() const;

  bool operator==(const ModelConfig&) const = default;
};

/// ValidationError on any violated invariant (head divisibility, shape
/// divisibility, dropout range, class count).
void validate(const ModelConfig& c);

/// Same as validate() but for an arbitrary inference shape.
void validate_input_shape(const ModelConfig& c, const std::array<std::int64_t, 3>& shape);

/// True when the encoder halves of two configs are interchangeable.
bool encoder_compatible(const ModelConfig& a, const ModelConfig& b);

}  // namespace mcswin
