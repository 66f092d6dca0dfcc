#pragma once

#include <string>
#include <vector>

#include "mcswin/volume.hpp"

namespace mcswin {

/// T argmax label maps from stochastic forward passes, same geometry.
struct PredictionStack {
  std::vector<LabelMap> samples;

  int size() const { return static_cast<int>(samples.size()); }
};

struct UncertaintyMap {
  CountMap agreement;  // modal vote count per voxel, 1..T
  LabelMap uncertain;  // 1 where agreement < threshold
  LabelMap consensus;  // modal class, ties -> smallest label
  int samples = 0;     // T
  int threshold = 0;   // k
};

/// Majority vote with the agreement threshold. ValidationError unless
/// 1 <= k <= T and all samples share geometry.
UncertaintyMap vote(const PredictionStack& stack, int k);

struct UncertaintyFiles {
  std::string agreement;
  std::string uncertain;
  std::string consensus;
  std::vector<std::string> slices;
};

/// Writes <prefix>agreement.mvol (count dtype), <prefix>uncertain.mvol,
/// <prefix>consensus.mvol and one binary PGM per axial slice,
/// <prefix>slice_NNN.pgm, where brightness = 255 * (T - agreement) / (T - 1)
/// (all black when T == 1). Bright pixels are where the passes disagree.
UncertaintyFiles export_uncertainty(const UncertaintyMap& map, const std::string& prefix);

/// Heatmap value for one voxel; exposed for tests.
std::uint8_t heat_value(int agreement, int samples);

}  // namespace mcswin
