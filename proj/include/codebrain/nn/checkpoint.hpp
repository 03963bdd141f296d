#pragma once

// Checkpoint directory: manifest.json plus one raw little-endian float32 blob
// per tensor. Writes go to a sibling temp directory that is renamed into
// place, so a reader never sees a partial checkpoint.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "codebrain/errors.hpp"
#include "codebrain/nn/layers.hpp"

namespace codebrain::nn {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "codebrain-checkpoint";

inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

// Hash of a JSON config; nlohmann orders object keys, so this is canonical.
inline std::string config_hash(const nlohmann::json& config) { return fnv1a_hex(config.dump()); }

struct StoredTensor {
  num::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json manifest;  // "config", "config_hash", "step", "meta", ...
  std::map<std::string, StoredTensor> tensors;

  const StoredTensor& tensor(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    return it->second;
  }
};

template <class T>
void add_tensors(Checkpoint& ckpt, const ParamList<T>& params) {
  for (const auto& [name, p] : params) {
    StoredTensor st{p.shape(), {}};
    st.values.reserve(p.size());
    for (T v : p.data()) st.values.push_back(static_cast<float>(v));
    ckpt.tensors[name] = std::move(st);
  }
}

// Copies stored values into existing tensors, checking shapes.
template <class T>
void restore_tensors(const Checkpoint& ckpt, const ParamList<T>& params) {
  for (auto [name, p] : params) {
    const auto& st = ckpt.tensor(name);
    if (st.shape != p.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + num::shape_string(st.shape) + ", expected " +
                        num::shape_string(p.shape()));
    auto dst = p.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(st.values[i]);
  }
}

namespace detail {

inline std::string blob_name(std::size_t index) {
  std::ostringstream s;
  s << "tensor_" << std::setw(4) << std::setfill('0') << index << ".f32";
  return s.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".tmp";
  const fs::path old = dir.string() + ".old";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  nlohmann::json manifest = ckpt.manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  nlohmann::json index = nlohmann::json::array();
  std::size_t i = 0;
  for (const auto& [name, st] : ckpt.tensors) {
    std::string bytes;
    bytes.reserve(st.values.size() * 4);
    for (float v : st.values) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
    const auto file = detail::blob_name(i++);
    detail::write_file(tmp / file, bytes);
    index.push_back({{"name", name}, {"shape", st.shape}, {"file", file}, {"count", st.values.size()}});
  }
  manifest["tensors"] = index;
  detail::write_file(tmp / "manifest.json", manifest.dump(2) + "\n");
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw MissingPrerequisite("no checkpoint at " + dir.string());
  Checkpoint ckpt;
  try {
    ckpt.manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("unreadable checkpoint manifest: " + std::string(e.what()));
  }
  if (ckpt.manifest.value("format", "") != kCheckpointFormat) throw FormatError("not a checkpoint manifest");
  if (ckpt.manifest.value("version", -1) != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + ckpt.manifest.value("version", nlohmann::json()).dump());
  for (const auto& entry : ckpt.manifest.at("tensors")) {
    StoredTensor st;
    st.shape = entry.at("shape").get<num::Shape>();
    const auto count = entry.at("count").get<std::size_t>();
    if (num::numel(st.shape) != count) throw FormatError("checkpoint shape/count mismatch");
    const auto bytes = detail::read_file(dir / entry.at("file").get<std::string>());
    if (bytes.size() != count * 4) throw FormatError("checkpoint blob truncated: " + entry.at("file").get<std::string>());
    st.values.resize(count);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
      st.values[i] = std::bit_cast<float>(u);
    }
    ckpt.tensors[entry.at("name").get<std::string>()] = std::move(st);
  }
  ckpt.manifest.erase("tensors");
  ckpt.manifest.erase("format");
  ckpt.manifest.erase("version");
  return ckpt;
}

// Refuses a checkpoint written under a different configuration.
inline void require_config(const Checkpoint& ckpt, const nlohmann::json& config) {
  const auto stored = ckpt.manifest.value("config_hash", std::string());
  if (stored != config_hash(config))
    throw StateError("checkpoint config hash " + stored + " does not match current config " + config_hash(config));
}

}  // namespace codebrain::nn
