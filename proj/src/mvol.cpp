#include "mcswin/mvol.hpp"

#include <span>

#include "binary_io.hpp"
#include "mcswin/error.hpp"

namespace mcswin {
namespace {

constexpr char kMagic[4] = {'M', 'V', 'O', 'L'};

template <typename G>
void write_grid(const std::string& path, const G& g, MvolType type) {
  validate(g);
  detail::ByteWriter out;
  out.put_raw(kMagic, 4);
  out.put<std::uint32_t>(kMvolVersion);
  out.put<std::uint8_t>(static_cast<std::uint8_t>(type));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(g.shape.d));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(g.shape.h));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(g.shape.w));
  out.put<double>(g.spacing.z);
  out.put<double>(g.spacing.y);
  out.put<double>(g.spacing.x);
  out.put_array(std::span<const typename G::value_type>(g.data));
  detail::write_file_bytes(path, out.bytes());
}

template <typename G>
G read_payload(detail::ByteReader& in, Shape3 shape, Spacing spacing, const std::string& path) {
  G g;
  g.shape = shape;
  g.spacing = spacing;
  const auto n = static_cast<std::size_t>(shape.voxels());
  if (in.remaining() < n * sizeof(typename G::value_type))
    throw CorruptionError(path + ": truncated payload");
  g.data.resize(n);
  in.get_array(std::span<typename G::value_type>(g.data));
  if (in.remaining() != 0) throw CorruptionError(path + ": trailing bytes after payload");
  validate(g);
  return g;
}

}  // namespace

void write_volume(const std::string& path, const Volume& v) { write_grid(path, v, MvolType::Intensity); }
void write_volume(const std::string& path, const LabelMap& m) { write_grid(path, m, MvolType::Label); }
void write_volume(const std::string& path, const CountMap& m) { write_grid(path, m, MvolType::Count); }

AnyGrid read_volume(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  detail::ByteReader in(bytes, path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(path + ": not an .mvol file (bad magic)");
  for (int i = 0; i < 4; ++i) in.get<char>();
  const auto version = in.get<std::uint32_t>();
  if (version != kMvolVersion)
    throw FormatError(path + ": unsupported .mvol version " + std::to_string(version));
  const auto dtype = in.get<std::uint8_t>();
  Shape3 shape;
  shape.d = in.get<std::uint32_t>();
  shape.h = in.get<std::uint32_t>();
  shape.w = in.get<std::uint32_t>();
  Spacing spacing;
  spacing.z = in.get<double>();
  spacing.y = in.get<double>();
  spacing.x = in.get<double>();
  switch (static_cast<MvolType>(dtype)) {
    case MvolType::Intensity: return read_payload<Volume>(in, shape, spacing, path);
    case MvolType::Label: return read_payload<LabelMap>(in, shape, spacing, path);
    case MvolType::Count: return read_payload<CountMap>(in, shape, spacing, path);
  }
  throw ValidationError(path + ": unknown dtype " + std::to_string(int(dtype)));
}

namespace {
template <typename G>
G read_as(const std::string& path, const char* what) {
  auto any = read_volume(path);
  if (auto* g = std::get_if<G>(&any)) return std::move(*g);
  throw ValidationError(path + ": expected " + what + " .mvol");
}
}  // namespace

Volume read_intensity(const std::string& path) { return read_as<Volume>(path, "intensity"); }
LabelMap read_labels(const std::string& path) { return read_as<LabelMap>(path, "label"); }
CountMap read_counts(const std::string& path) { return read_as<CountMap>(path, "count"); }

}  // namespace mcswin
