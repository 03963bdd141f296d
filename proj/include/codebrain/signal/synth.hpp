#pragma once

// Labeled synthetic EEG: each class is a mixture of band-limited tones plus
// white Gaussian noise. Output is in raw microvolts and always passes
// preprocess().
//
// Config keys:
//   seed, channels, sample_rate, duration_s, records, noise_uv, tones_per_band
//   class.<name> = lo-hi:amp[, lo-hi:amp ...]     (Hz, uV)
//   class.<name>.noise_uv = sigma                  (optional per-class noise)

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "codebrain/config.hpp"
#include "codebrain/signal/record.hpp"

namespace codebrain::signal {

struct Band {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
  double amplitude_uv = 0.0;
};

struct SynthClass {
  std::string name;
  std::vector<Band> bands;
  double noise_uv = 5.0;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t channels = 4;
  std::uint32_t sample_rate = 200;
  std::size_t duration_s = 4;
  std::size_t records = 200;
  std::size_t tones_per_band = 3;
  std::vector<SynthClass> classes;
};

inline constexpr double kSynthPeakUv = 95.0;

inline std::vector<Band> parse_bands(const std::string& key, const std::string& text) {
  std::vector<Band> bands;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = KeyValueConfig::trim(item);
    const auto dash = item.find('-');
    const auto colon = item.find(':');
    if (dash == std::string::npos || colon == std::string::npos || colon < dash)
      throw ConfigError("key '" + key + "': band must look like lo-hi:amp, got '" + item + "'");
    Band b;
    b.lo_hz = KeyValueConfig::to_double(key, KeyValueConfig::trim(item.substr(0, dash)));
    b.hi_hz = KeyValueConfig::to_double(key, KeyValueConfig::trim(item.substr(dash + 1, colon - dash - 1)));
    b.amplitude_uv = KeyValueConfig::to_double(key, KeyValueConfig::trim(item.substr(colon + 1)));
    bands.push_back(b);
  }
  if (bands.empty()) throw ConfigError("key '" + key + "': no bands");
  return bands;
}

inline void validate(const SynthSpec& spec) {
  if (spec.classes.size() < 2) throw std::invalid_argument("synth: at least two classes are required");
  if (spec.channels == 0 || spec.channels > 0xffff) throw std::invalid_argument("synth: bad channel count");
  if (spec.sample_rate == 0 || spec.duration_s == 0) throw std::invalid_argument("synth: empty record");
  if (spec.tones_per_band == 0) throw std::invalid_argument("synth: tones_per_band must be >= 1");
  const double nyquist = spec.sample_rate / 2.0;
  for (const auto& c : spec.classes) {
    if (c.noise_uv < 0.0) throw std::invalid_argument("synth: negative noise for class " + c.name);
    for (const auto& b : c.bands) {
      if (b.lo_hz < 0.0 || b.hi_hz < b.lo_hz) throw std::invalid_argument("synth: malformed band in class " + c.name);
      if (b.hi_hz >= nyquist)
        throw std::invalid_argument("synth: band " + std::to_string(b.hi_hz) + " Hz in class " + c.name +
                                    " is at or above Nyquist (" + std::to_string(nyquist) + " Hz)");
      if (b.amplitude_uv < 0.0) throw std::invalid_argument("synth: negative amplitude in class " + c.name);
    }
  }
}

inline SynthSpec parse_synth_spec(const KeyValueConfig& cfg) {
  SynthSpec s;
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  s.channels = static_cast<std::size_t>(cfg.get_int("channels", 4));
  s.sample_rate = static_cast<std::uint32_t>(cfg.get_int("sample_rate", 200));
  s.duration_s = static_cast<std::size_t>(cfg.get_int("duration_s", 4));
  s.records = static_cast<std::size_t>(cfg.get_int("records", 200));
  s.tones_per_band = static_cast<std::size_t>(cfg.get_int("tones_per_band", 3));
  const double noise = cfg.get_double("noise_uv", 5.0);
  for (const auto& key : cfg.keys()) {
    if (key.rfind("class.", 0) != 0) continue;
    const auto rest = key.substr(6);
    if (rest.size() > 9 && rest.ends_with(".noise_uv")) continue;
    if (rest.empty() || rest.find('.') != std::string::npos) throw ConfigError("unknown configuration key '" + key + "'");
    SynthClass c;
    c.name = rest;
    c.bands = parse_bands(key, cfg.raw(key));
    c.noise_uv = cfg.get_double(key + ".noise_uv", noise);
    s.classes.push_back(std::move(c));
  }
  for (const auto& key : cfg.keys()) {
    if (key.rfind("class.", 0) == 0 && key.ends_with(".noise_uv")) {
      const auto name = key.substr(6, key.size() - 6 - 9);
      bool found = false;
      for (const auto& c : s.classes) found = found || c.name == name;
      if (!found) throw ConfigError("noise override for undefined class '" + name + "'");
    }
  }
  cfg.reject_unknown({"seed", "channels", "sample_rate", "duration_s", "records", "noise_uv", "tones_per_band"},
                     {"class."});
  validate(s);
  return s;
}

inline std::string default_synth_config(std::size_t classes, std::size_t records, std::uint64_t seed,
                                        std::size_t channels = 4, std::size_t duration_s = 4) {
  static const char* const kBands[] = {"1-4:40",  "8-12:40", "18-26:35", "4-7:40",
                                       "30-40:30", "13-17:35", "45-55:30", "60-70:30"};
  static const char* const kNames[] = {"slow", "alpha", "beta", "theta", "gamma", "sigma", "high", "vhigh"};
  if (classes < 2 || classes > 8) throw std::invalid_argument("default synth config supports 2..8 classes");
  std::ostringstream out;
  out << "seed=" << seed << "\nchannels=" << channels << "\nsample_rate=200\nduration_s=" << duration_s
      << "\nrecords=" << records << "\nnoise_uv=5\ntones_per_band=3\n";
  for (std::size_t c = 0; c < classes; ++c) out << "class." << kNames[c] << "=" << kBands[c] << "\n";
  return out.str();
}

// Record i belongs to class i mod K and draws from its own stream seeded by
// (seed, i), so any record can be regenerated in isolation.
inline EegRecord synth_record(const SynthSpec& spec, std::size_t index) {
  const std::size_t label = index % spec.classes.size();
  const auto& cls = spec.classes[label];
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  EegRecord r;
  r.channels = default_channel_names(spec.channels);
  r.sample_rate = spec.sample_rate;
  r.samples_per_channel = static_cast<std::uint64_t>(spec.sample_rate) * spec.duration_s;
  r.label = static_cast<std::int32_t>(label);
  r.samples.assign(spec.channels * r.samples_per_channel, 0.0f);

  const double per_tone = 1.0 / std::sqrt(static_cast<double>(spec.tones_per_band));
  std::vector<double> ch(r.samples_per_channel);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    std::fill(ch.begin(), ch.end(), 0.0);
    for (const auto& b : cls.bands) {
      for (std::size_t k = 0; k < spec.tones_per_band; ++k) {
        const double f = b.lo_hz + (b.hi_hz - b.lo_hz) * unit(rng);
        const double ph = 2.0 * std::numbers::pi * unit(rng);
        const double amp = b.amplitude_uv * per_tone * (0.8 + 0.4 * unit(rng));
        for (std::size_t t = 0; t < ch.size(); ++t)
          ch[t] += amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / spec.sample_rate + ph);
      }
    }
    for (auto& v : ch) v += cls.noise_uv * gauss(rng);
    double peak = 0.0;
    for (double v : ch) peak = std::max(peak, std::abs(v));
    const double g = peak > kSynthPeakUv ? kSynthPeakUv / peak : 1.0;
    for (std::size_t t = 0; t < ch.size(); ++t) r.samples[c * r.samples_per_channel + t] = static_cast<float>(ch[t] * g);
  }
  return r;
}

inline std::vector<EegRecord> synth_generate(const SynthSpec& spec) {
  validate(spec);
  std::vector<EegRecord> out;
  out.reserve(spec.records);
  for (std::size_t i = 0; i < spec.records; ++i) out.push_back(synth_record(spec, i));
  return out;
}

inline std::vector<EegRecord> synth_generate(const KeyValueConfig& cfg) { return synth_generate(parse_synth_spec(cfg)); }

}  // namespace codebrain::signal
