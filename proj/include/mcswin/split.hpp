#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mcswin {

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

void validate(const SplitRatios& r);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Shuffles ids by seed, then takes round(n*val) for val and round(n*test) for
/// test; train gets the rest.
DatasetSplit split_dataset(const std::vector<std::string>& ids, const SplitRatios& ratios,
                           std::uint64_t seed);

}  // namespace mcswin
