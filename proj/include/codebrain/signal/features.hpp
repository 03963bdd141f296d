#pragma once

// Amplitude/phase spectra of a patch and their z-scored targets.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "codebrain/numerics/fft.hpp"

namespace codebrain::signal {

struct ZStats {
  double mean = 0.0;
  double std = 1.0;
};

struct FreqFeatures {
  std::vector<double> amplitude;  // raw |X[k]|
  std::vector<double> phase;      // raw atan2(Im, Re) in (-pi, pi]
  std::vector<double> amplitude_z;
  std::vector<double> phase_z;
  ZStats amplitude_stats;
  ZStats phase_stats;
};

// Constant vectors get std 1 so their z-scores are all zero.
inline ZStats zstats(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size());
  const double s = std::sqrt(var);
  return {m, s > 1e-12 ? s : 1.0};
}

inline std::vector<double> zscore(const std::vector<double>& v, const ZStats& st) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - st.mean) / st.std;
  return out;
}

inline double wrap_phase(double re, double im) {
  const double p = std::atan2(im, re);
  return p <= -std::numbers::pi ? std::numbers::pi : p;
}

template <class F>
FreqFeatures freq_features(std::span<const F> patch) {
  if (patch.size() < 2) throw std::invalid_argument("freq_features: patch needs at least 2 samples");
  const auto X = num::dft(patch);
  FreqFeatures f;
  f.amplitude.resize(X.size());
  f.phase.resize(X.size());
  for (std::size_t k = 0; k < X.size(); ++k) {
    f.amplitude[k] = std::hypot(X.re[k], X.im[k]);
    f.phase[k] = wrap_phase(X.re[k], X.im[k]);
  }
  f.amplitude_stats = zstats(f.amplitude);
  f.phase_stats = zstats(f.phase);
  f.amplitude_z = zscore(f.amplitude, f.amplitude_stats);
  f.phase_z = zscore(f.phase, f.phase_stats);
  return f;
}

template <class F>
FreqFeatures freq_features(const std::vector<F>& patch) {
  return freq_features(std::span<const F>(patch));
}

// Energy fraction of |X[k]|^2 for bins whose frequency lies below cutoff_hz,
// counting both halves of the spectrum.
template <class F>
double energy_fraction_below(std::span<const F> x, double sample_rate, double cutoff_hz) {
  const auto X = num::dft(x);
  const std::size_t n = X.size();
  double total = 0.0, low = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = X.re[k] * X.re[k] + X.im[k] * X.im[k];
    const std::size_t kk = std::min(k, n - k);
    const double hz = static_cast<double>(kk) * sample_rate / static_cast<double>(n);
    total += e;
    if (hz < cutoff_hz) low += e;
  }
  return total > 0.0 ? low / total : 0.0;
}

}  // namespace codebrain::signal
