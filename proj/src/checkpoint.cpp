#include "mcswin/checkpoint.hpp"

#include <cstring>

#include "binary_io.hpp"
#include "json.hpp"
#include "mcswin/config.hpp"
#include "mcswin/error.hpp"

namespace mcswin {
namespace {
constexpr char kMagic[4] = {'M', 'C', 'K', 'P'};
}

void save_checkpoint(const ModelState& state, const std::string& path) {
  detail::ByteWriter out;
  out.put_raw(kMagic, 4);
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put_string(model_config_to_json(state.config));
  out.put_string(nlohmann::json(state.metadata).dump());
  const auto params = state.net->named_parameters();
  out.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& item : params) {
    auto t = item.value().detach().to(torch::kFloat).contiguous();
    if (!torch::isfinite(t).all().item<bool>())
      throw NumericError("refusing to checkpoint non-finite parameter " + item.key());
    out.put_string(item.key());
    out.put<std::uint8_t>(0);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
    for (auto s : t.sizes()) out.put<std::uint64_t>(static_cast<std::uint64_t>(s));
    out.put_array(std::span<const float>(t.data_ptr<float>(), static_cast<std::size_t>(t.numel())));
  }
  const auto checksum = detail::fnv1a64(out.bytes());
  out.put<std::uint64_t>(checksum);
  detail::write_file_bytes(path, out.bytes());
}

ModelState load_checkpoint(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(path + ": not a checkpoint (bad magic)");
  detail::ByteReader in(bytes, path);
  for (int i = 0; i < 4; ++i) in.get<char>();
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < 4 + 4 + 8) throw CorruptionError(path + ": truncated payload");
  {
    std::span<const unsigned char> body(bytes.data(), bytes.size() - 8);
    detail::ByteReader tail(std::span<const unsigned char>(bytes.data() + bytes.size() - 8, 8), path);
    if (detail::fnv1a64(body) != tail.get<std::uint64_t>())
      throw CorruptionError(path + ": checksum mismatch (truncated or corrupted)");
  }

  ModelConfig config;
  try {
    config = model_config_from_json(in.get_string());
  } catch (const ConfigError& e) {
    throw CorruptionError(path + ": stored model config is invalid: " + e.what());
  }
  std::map<std::string, std::string> metadata;
  try {
    metadata = nlohmann::json::parse(in.get_string()).get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(path + ": stored metadata is invalid: " + e.what());
  }

  ModelState state = init_model(config, 0);
  state.metadata = std::move(metadata);
  auto params = state.net->named_parameters();
  const auto count = in.get<std::uint32_t>();
  if (count != params.size())
    throw CorruptionError(path + ": parameter count " + std::to_string(count) + " does not match config (" +
                          std::to_string(params.size()) + ")");
  torch::NoGradGuard no_grad;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = in.get_string();
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != 0) throw CorruptionError(path + ": unsupported tensor dtype for " + name);
    const auto ndim = in.get<std::uint32_t>();
    if (ndim > 8) throw CorruptionError(path + ": implausible rank for " + name);
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = static_cast<std::int64_t>(in.get<std::uint64_t>());
    auto* target = params.find(name);
    if (target == nullptr) throw CorruptionError(path + ": unexpected parameter " + name);
    if (!target->sizes().equals(dims)) throw CorruptionError(path + ": shape mismatch for " + name);
    auto buf = torch::empty(dims, torch::kFloat);
    in.get_array(std::span<float>(buf.data_ptr<float>(), static_cast<std::size_t>(buf.numel())));
    target->copy_(buf);
  }
  if (in.remaining() != 8) throw CorruptionError(path + ": trailing bytes after parameters");
  return state;
}

ModelState load_checkpoint(const std::string& path, const ModelConfig& expected) {
  auto state = load_checkpoint(path);
  if (!(state.config == expected))
    throw CheckpointMismatchError(path + ": checkpoint config " + model_config_to_json(state.config) +
                                  " differs from requested " + model_config_to_json(expected));
  return state;
}

}  // namespace mcswin
