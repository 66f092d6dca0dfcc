#include "mcswin/uncertainty.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mcswin/error.hpp"
#include "mcswin/mvol.hpp"

namespace mcswin {

UncertaintyMap vote(const PredictionStack& stack, int k) {
  const int t = stack.size();
  if (t < 1) throw ValidationError("prediction stack is empty");
  if (t > 255) throw ValidationError("at most 255 samples are supported");
  if (k < 1 || k > t) throw ValidationError("threshold k must satisfy 1 <= k <= T");
  const auto& first = stack.samples.front();
  for (const auto& s : stack.samples) {
    if (!(s.shape == first.shape) || !(s.spacing == first.spacing))
      throw ValidationError("prediction samples differ in geometry");
    if (s.data.size() != static_cast<std::size_t>(s.shape.voxels()))
      throw ValidationError("prediction sample payload size mismatch");
  }

  UncertaintyMap out;
  out.samples = t;
  out.threshold = k;
  out.agreement = CountMap(first.shape, first.spacing);
  out.uncertain = LabelMap(first.shape, first.spacing);
  out.consensus = LabelMap(first.shape, first.spacing);
  for (std::size_t i = 0; i < first.data.size(); ++i) {
    std::array<int, kNumClasses> counts{};
    for (const auto& s : stack.samples) {
      const auto v = s.data[i];
      if (v >= kNumClasses) throw ValidationError("prediction label outside 0..5");
      ++counts[v];
    }
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (counts[c] > counts[best]) best = c;
    out.consensus.data[i] = static_cast<std::uint8_t>(best);
    out.agreement.data[i] = static_cast<std::uint8_t>(counts[best]);
    out.uncertain.data[i] = counts[best] < k ? 1 : 0;
  }
  return out;
}

std::uint8_t heat_value(int agreement, int samples) {
  if (samples <= 1) return 0;
  const double v = 255.0 * double(samples - agreement) / double(samples - 1);
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

UncertaintyFiles export_uncertainty(const UncertaintyMap& map, const std::string& prefix) {
  validate(map.agreement);
  validate(map.uncertain);
  validate(map.consensus);
  if (!(map.agreement.shape == map.uncertain.shape) || !(map.agreement.shape == map.consensus.shape))
    throw ValidationError("uncertainty map components differ in shape");

  UncertaintyFiles files;
  files.agreement = prefix + "agreement.mvol";
  files.uncertain = prefix + "uncertain.mvol";
  files.consensus = prefix + "consensus.mvol";
  write_volume(files.agreement, map.agreement);
  write_volume(files.uncertain, map.uncertain);
  write_volume(files.consensus, map.consensus);

  const Shape3 s = map.agreement.shape;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(s.h * s.w));
  for (std::int64_t z = 0; z < s.d; ++z) {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%03lld.pgm", static_cast<long long>(z));
    const std::string path = prefix + name;
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x)
        pixels[static_cast<std::size_t>(y * s.w + x)] = heat_value(map.agreement.at(z, y, x), map.samples);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << s.w << ' ' << s.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("write failed: " + path);
    files.slices.push_back(path);
  }
  return files;
}

}  // namespace mcswin
