#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "capellm/core/parameter.hpp"

namespace capellm {

// Checkpoint layout:
//   8 bytes   magic "CAPECKPT"
//   8 bytes   header length L (little-endian uint64)
//   L bytes   JSON header {format_version, dtype, tensors:[{name, shape, offset, numel}], meta}
//   payload   float32 little-endian values, tensors back to back (offset counts floats)
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'P', 'E', 'C', 'K', 'P', 'T'};
inline constexpr const char* kCheckpointVersion = "capellm-ckpt/1";

namespace detail {
inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace detail

// Writes to `path` via a temporary file and rename, so readers never see a
// partial checkpoint.
template <typename T>
void save_checkpoint(const ParameterSet<T>& params, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["dtype"] = "float32";
  header["meta"] = meta;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.value().shape()}, {"offset", offset}, {"numel", p.numel()}});
    offset += p.numel();
  }
  const std::string hdr = header.dump();

  std::string blob(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u64_le(blob, hdr.size());
  blob += hdr;
  blob.reserve(blob.size() + offset * 4);
  for (const auto& p : params) {
    for (T v : p.value().values()) detail::put_u32_le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!os) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointHeader {
  nlohmann::json json;
  std::size_t payload_offset = 0;
};

inline CheckpointHeader read_checkpoint_header(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw SchemaError("'" + origin + "' is not a checkpoint (bad magic)");
  }
  const auto len = detail::get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
  if (16 + len > bytes.size()) throw SchemaError("'" + origin + "': truncated checkpoint header");
  CheckpointHeader h;
  h.json = nlohmann::json::parse(bytes.substr(16, len));
  h.payload_offset = 16 + len;
  if (h.json.value("format_version", "") != kCheckpointVersion) {
    throw SchemaError("'" + origin + "': unsupported checkpoint version " + h.json.value("format_version", "?"));
  }
  if (h.json.value("dtype", "") != "float32") throw SchemaError("'" + origin + "': unsupported dtype");
  return h;
}

// Loads every tensor named in the checkpoint into `params`. Names and shapes
// must match exactly. Returns the checkpoint's meta object.
template <typename T>
nlohmann::json load_checkpoint(ParameterSet<T>& params, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("checkpoint not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto hdr = read_checkpoint_header(bytes, path.string());
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + hdr.payload_offset;
  const std::size_t payload_floats = (bytes.size() - hdr.payload_offset) / 4;
  std::size_t loaded = 0;
  for (const auto& t : hdr.json.at("tensors")) {
    const std::string name = t.at("name");
    auto& p = params.get(name);
    const auto shape = t.at("shape").get<std::vector<int>>();
    if (shape != p.value().shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                           p.value().shape_str());
    }
    const std::size_t off = t.at("offset");
    const std::size_t n = t.at("numel");
    if (off + n > payload_floats) throw SchemaError("checkpoint tensor '" + name + "' exceeds payload");
    T* dst = p.mutable_value().data();
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = static_cast<T>(std::bit_cast<float>(detail::get_u32_le(payload + 4 * (off + i))));
    }
    ++loaded;
  }
  if (loaded != params.size()) {
    throw SchemaError("checkpoint '" + path.string() + "' holds " + std::to_string(loaded) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  return hdr.json.value("meta", nlohmann::json::object());
}

}  // namespace capellm
