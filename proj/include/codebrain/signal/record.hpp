#pragma once

// EEG records, amplitude preprocessing, whole-second patching and the binary
// record file format.
//
// File layout (little-endian):
//   "EEGR" | version u16 | channels u16 | sample_rate u32 | samples u64 |
//   label i32 (-1 = none) | channels*samples f32, row-major by channel
// An optional "<path>.json" sidecar carries {"channels": [names...]}.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "codebrain/errors.hpp"

namespace codebrain::signal {

inline constexpr std::uint16_t kRecordVersion = 1;
inline constexpr double kAmplitudeLimitUv = 100.0;
inline constexpr double kMicrovoltScale = 100.0;

struct EegRecord {
  std::vector<std::string> channels;
  std::uint32_t sample_rate = 200;
  std::uint64_t samples_per_channel = 0;
  std::vector<float> samples;  // channels x samples_per_channel
  std::int32_t label = -1;

  std::size_t channel_count() const { return channels.size(); }
  float at(std::size_t c, std::size_t t) const { return samples[c * samples_per_channel + t]; }
  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(samples).subspan(c * samples_per_channel, samples_per_channel);
  }
  double duration_seconds() const { return static_cast<double>(samples_per_channel) / sample_rate; }
};

inline std::vector<std::string> default_channel_names(std::size_t n) {
  static const char* const k1020[] = {"Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz",
                                      "C4",  "T4",  "T5", "P3", "Pz", "P4", "T6", "O1", "O2"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back(i < 19 ? k1020[i] : "Ch" + std::to_string(i));
  return names;
}

// Thrown by preprocess; locates the first out-of-range sample.
struct AmplitudeViolation : std::runtime_error {
  AmplitudeViolation(std::size_t ch, std::size_t t, double value)
      : std::runtime_error("amplitude " + std::to_string(value) + " uV exceeds limit at channel " +
                           std::to_string(ch) + ", sample " + std::to_string(t)),
        channel(ch),
        sample(t) {}
  std::size_t channel;
  std::size_t sample;
};

// Band-pass / notch extension point for real recordings. Synthetic data
// carries no line noise, so this returns its input unchanged.
inline EegRecord filter_hook(EegRecord raw) { return raw; }

// Raw microvolts -> normalized units (divide by 100). Records with any
// |value| > 100 uV are rejected.
inline EegRecord preprocess(const EegRecord& raw) {
  EegRecord out = raw;
  for (std::size_t c = 0; c < raw.channel_count(); ++c) {
    for (std::size_t t = 0; t < raw.samples_per_channel; ++t) {
      const float v = raw.at(c, t);
      if (!(std::abs(v) <= kAmplitudeLimitUv)) throw AmplitudeViolation(c, t, v);
    }
  }
  for (auto& v : out.samples) v = static_cast<float>(v / kMicrovoltScale);
  return out;
}

struct PatchGrid {
  std::size_t channels = 0;
  std::size_t patches_per_channel = 0;
  std::size_t patch_length = 0;
  std::uint32_t sample_rate = 200;
  std::vector<std::string> channel_ids;
  std::vector<double> patch_times;  // start time (s) of each patch column
  std::vector<float> data;          // channels x patches x patch_length
  std::int32_t label = -1;

  std::size_t patch_count() const { return channels * patches_per_channel; }
  // Flat index in channel-major order.
  std::size_t index(std::size_t c, std::size_t n) const { return c * patches_per_channel + n; }
  std::span<const float> patch(std::size_t c, std::size_t n) const {
    return std::span<const float>(data).subspan(index(c, n) * patch_length, patch_length);
  }
  std::span<const float> patch(std::size_t flat) const {
    return std::span<const float>(data).subspan(flat * patch_length, patch_length);
  }
};

inline PatchGrid patch(const EegRecord& record, std::size_t patch_seconds = 1) {
  if (patch_seconds == 0 || record.sample_rate == 0) throw std::invalid_argument("patch: zero patch length");
  const std::size_t len = record.sample_rate * patch_seconds;
  if (record.samples_per_channel == 0 || record.samples_per_channel % len != 0) {
    throw std::invalid_argument("patch: " + std::to_string(record.samples_per_channel) +
                                " samples are not a whole number of " + std::to_string(len) + "-sample patches");
  }
  PatchGrid grid;
  grid.channels = record.channel_count();
  grid.patches_per_channel = record.samples_per_channel / len;
  grid.patch_length = len;
  grid.sample_rate = record.sample_rate;
  grid.channel_ids = record.channels;
  grid.label = record.label;
  for (std::size_t n = 0; n < grid.patches_per_channel; ++n)
    grid.patch_times.push_back(static_cast<double>(n * patch_seconds));
  // Channel-major rows already tile into consecutive patches.
  grid.data = record.samples;
  return grid;
}

inline EegRecord unpatch(const PatchGrid& grid) {
  EegRecord r;
  r.channels = grid.channel_ids;
  r.sample_rate = grid.sample_rate;
  r.samples_per_channel = grid.patches_per_channel * grid.patch_length;
  r.samples = grid.data;
  r.label = grid.label;
  return r;
}

namespace detail {

template <class V>
void put_le(std::string& buf, V v) {
  static_assert(std::is_integral_v<V>);
  for (std::size_t i = 0; i < sizeof(V); ++i) buf.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class V>
V get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(V); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<V>(v);
}

inline constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 + 8 + 4;

}  // namespace detail

inline std::string encode_record(const EegRecord& r) {
  if (r.samples.size() != r.channel_count() * r.samples_per_channel)
    throw std::invalid_argument("record sample count does not match channels x samples");
  if (r.channel_count() > 0xffff) throw std::invalid_argument("too many channels for the record format");
  std::string buf = "EEGR";
  detail::put_le<std::uint16_t>(buf, kRecordVersion);
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(r.channel_count()));
  detail::put_le<std::uint32_t>(buf, r.sample_rate);
  detail::put_le<std::uint64_t>(buf, r.samples_per_channel);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(r.label));
  buf.reserve(buf.size() + 4 * r.samples.size());
  for (float v : r.samples) detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  return buf;
}

inline EegRecord decode_record(const std::string& bytes, std::vector<std::string> channel_names = {}) {
  if (bytes.size() < detail::kHeaderBytes) {
    if (bytes.size() >= 4 && bytes.compare(0, 4, "EEGR") != 0) throw FormatError("bad record magic");
    throw IoError("record header truncated");
  }
  if (bytes.compare(0, 4, "EEGR") != 0) throw FormatError("bad record magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto version = detail::get_le<std::uint16_t>(p + 4);
  if (version != kRecordVersion) throw FormatError("unsupported record version " + std::to_string(version));
  EegRecord r;
  const auto channels = detail::get_le<std::uint16_t>(p + 6);
  r.sample_rate = detail::get_le<std::uint32_t>(p + 8);
  r.samples_per_channel = detail::get_le<std::uint64_t>(p + 12);
  r.label = static_cast<std::int32_t>(detail::get_le<std::uint32_t>(p + 20));
  const std::uint64_t count = static_cast<std::uint64_t>(channels) * r.samples_per_channel;
  if (bytes.size() - detail::kHeaderBytes < count * 4) throw IoError("record payload truncated");
  if (bytes.size() - detail::kHeaderBytes > count * 4) throw FormatError("trailing bytes after record payload");
  r.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    r.samples[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + detail::kHeaderBytes + 4 * i));
  if (channel_names.size() == channels) {
    r.channels = std::move(channel_names);
  } else {
    r.channels = default_channel_names(channels);
  }
  return r;
}

inline std::string sidecar_path(const std::filesystem::path& path) { return path.string() + ".json"; }

inline void save_record(const EegRecord& record, const std::filesystem::path& path, bool with_sidecar = true) {
  const auto bytes = encode_record(record);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
  if (with_sidecar) {
    std::ofstream side(sidecar_path(path), std::ios::trunc);
    side << nlohmann::json{{"channels", record.channels}}.dump(2) << "\n";
  }
}

inline EegRecord load_record(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::string> names;
  if (std::filesystem::exists(sidecar_path(path))) {
    std::ifstream side(sidecar_path(path));
    try {
      const auto j = nlohmann::json::parse(side);
      names = j.at("channels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad sidecar for " + path.string() + ": " + e.what());
    }
  }
  return decode_record(bytes, std::move(names));
}

}  // namespace codebrain::signal
