#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mcswin/rng.hpp"
#include "mcswin/volume.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mcswin_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline mcswin::Volume random_volume(mcswin::Shape3 s, mcswin::Rng& rng) {
  mcswin::Volume v(s, {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)});
  for (auto& x : v.data) x = static_cast<float>(rng.normal());
  return v;
}

/// Labels drawn independently with P(label == cls) = density for a single class.
inline mcswin::LabelMap random_mask(mcswin::Shape3 s, int cls, double density, mcswin::Rng& rng) {
  mcswin::LabelMap m(s, {1, 1, 1});
  for (auto& x : m.data) x = rng.bernoulli(density) ? static_cast<std::uint8_t>(cls) : 0;
  return m;
}

}  // namespace testing
