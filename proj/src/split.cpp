#include "mcswin/split.hpp"

#include <cmath>
#include <set>

#include "mcswin/error.hpp"
#include "mcswin/rng.hpp"

namespace mcswin {

void validate(const SplitRatios& r) {
  for (double v : {r.train, r.val, r.test})
    if (!(v > 0.0 && v < 1.0)) throw ValidationError("split ratios must each lie in (0, 1)");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, const SplitRatios& ratios,
                           std::uint64_t seed) {
  validate(ratios);
  if (ids.empty()) throw ValidationError("cannot split an empty id list");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
    throw ValidationError("dataset ids must be distinct");

  std::vector<std::string> order = ids;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(i) - 1));
    std::swap(order[i - 1], order[j]);
  }

  const double n = double(ids.size());
  const auto n_val = static_cast<std::size_t>(std::llround(n * ratios.val));
  const auto n_test = static_cast<std::size_t>(std::llround(n * ratios.test));
  const std::size_t n_train = ids.size() - n_val - n_test;

  DatasetSplit out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test.assign(order.begin() + n_train + n_val, order.end());
  return out;
}

}  // namespace mcswin
