#pragma once

// Checkpoint directory:
//   manifest.json  {format_version, tensors: [{name, shape, dtype, offset, length}], metadata}
//   params.bin     concatenated little-endian float32 tensors

#include <filesystem>
#include <string>

#include "liv/diffnet.hpp"
#include "liv/io.hpp"

namespace liv {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ParamStore params;
  Json metadata = Json::object();
};

inline std::vector<std::uint8_t> pack_params(const ParamStore& params, Json& table) {
  std::vector<std::uint8_t> bytes;
  table = Json::array();
  for (const auto& [name, t] : params) {
    const std::size_t offset = bytes.size();
    for (double v : t.data) append_f32le(bytes, static_cast<float>(v));
    table.push_back({{"name", name},
                     {"shape", t.shape},
                     {"dtype", "f32le"},
                     {"offset", offset},
                     {"length", bytes.size() - offset}});
  }
  return bytes;
}

inline void save_checkpoint(const ParamStore& params, const Json& metadata, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Json table;
  const auto bytes = pack_params(params, table);
  write_file(dir / "params.bin", bytes);
  write_json_file(dir / "manifest.json",
                  {{"format_version", kCheckpointFormatVersion}, {"tensors", table}, {"metadata", metadata}});
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  save_checkpoint(ckpt.params, ckpt.metadata, dir);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Json manifest;
  try {
    manifest = parse_json_file(dir / "manifest.json");
  } catch (const FormatError& e) {
    throw CorruptCheckpointError(std::string("malformed manifest: ") + e.what());
  }
  const auto bytes = read_file(dir / "params.bin");
  Checkpoint ckpt;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw CorruptCheckpointError("unsupported checkpoint format version");
    }
    std::size_t expected_end = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("length").get<std::size_t>();
      if (entry.at("dtype").get<std::string>() != "f32le") throw CorruptCheckpointError("unsupported dtype for " + name);
      Tensor t = Tensor::zeros(shape);
      if (length != t.size() * 4) throw CorruptCheckpointError("length does not match shape for " + name);
      if (offset != expected_end) throw CorruptCheckpointError("non-contiguous offset for " + name);
      if (offset + length > bytes.size()) {
        throw CorruptCheckpointError("params.bin truncated: tensor '" + name + "' needs bytes up to " +
                                     std::to_string(offset + length) + ", file has " + std::to_string(bytes.size()));
      }
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = read_f32le(bytes.data() + offset + 4 * i);
      ckpt.params.add(name, std::move(t));
      expected_end = offset + length;
    }
    if (expected_end != bytes.size()) throw CorruptCheckpointError("params.bin has trailing bytes");
    ckpt.metadata = manifest.at("metadata");
  } catch (const Json::exception& e) {
    throw CorruptCheckpointError(std::string("malformed manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw CorruptCheckpointError(std::string("inconsistent tensor table: ") + e.what());
  }
  return ckpt;
}

}  // namespace liv
