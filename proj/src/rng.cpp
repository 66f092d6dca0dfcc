#include "mcswin/rng.hpp"

#include <cmath>
#include <numbers>

namespace mcswin {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling over the largest multiple of range.
  const std::uint64_t limit = range == 0 ? 0 : (~std::uint64_t{0} / range) * range;
  std::uint64_t r = engine_();
  while (limit != 0 && r >= limit) r = engine_();
  return lo + static_cast<std::int64_t>(r % range);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mcswin
