#pragma once

// Timing and size comparison of sequence mixers on identical [L x F] inputs:
// the SGConv FFT path, direct O(L^2) causal convolution with a full-length
// kernel, and dense softmax attention.

#include <algorithm>
#include <chrono>
#include <complex>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "codebrain/ssm/sgconv.hpp"

namespace codebrain::ssm {

struct BenchRow {
  std::string backbone;
  std::size_t seq_len = 0;
  std::size_t features = 0;
  std::size_t params = 0;
  double wall_ms = std::numeric_limits<double>::quiet_NaN();  // NaN: not run
  std::size_t peak_bytes = 0;
};

struct BenchOptions {
  std::vector<std::size_t> lengths{1u << 12, 1u << 13, 1u << 14, 1u << 15};
  std::size_t features = 4;
  std::size_t sub_len = 16;
  std::size_t repeats = 3;                 // best of
  std::size_t max_attention_len = 1u << 13;  // dense attention is skipped above this
  std::uint64_t seed = 0;
};

// Closed-form SGConv parameter count: F * d * (log2(L/d) + 1).
inline std::size_t sgconv_parameter_count(std::size_t L, std::size_t d, std::size_t features) {
  return features * d * SgconvSpec::sub_kernels(L, d);
}

// Dense attention score-matrix bytes for one head in float32.
inline std::size_t dense_attention_bytes(std::size_t L) { return L * L * sizeof(float); }

namespace detail {

template <class Fn>
double best_ms(std::size_t repeats, Fn&& fn) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

// y[t, f] = sum_{s<=t} k[s, f] u[t-s, f], row-major [L x F].
inline std::vector<double> direct_causal_conv(const std::vector<float>& u, const std::vector<float>& k,
                                              std::size_t L, std::size_t F) {
  std::vector<double> y(L * F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < L; ++t) {
      double acc = 0.0;
      for (std::size_t s = 0; s <= t; ++s) acc += static_cast<double>(k[s * F + f]) * u[(t - s) * F + f];
      y[t * F + f] = acc;
    }
  }
  return y;
}

// Full single-head attention; the score row is recomputed per query.
inline std::vector<double> dense_attention(const std::vector<float>& q, const std::vector<float>& k,
                                           const std::vector<float>& v, std::size_t L, std::size_t F) {
  std::vector<double> y(L * F, 0.0), row(L);
  const double scale = 1.0 / std::sqrt(static_cast<double>(F));
  for (std::size_t i = 0; i < L; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < L; ++j) {
      double acc = 0.0;
      for (std::size_t f = 0; f < F; ++f) acc += static_cast<double>(q[i * F + f]) * k[j * F + f];
      row[j] = acc * scale;
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (auto& r : row) z += (r = std::exp(r - mx));
    for (std::size_t j = 0; j < L; ++j)
      for (std::size_t f = 0; f < F; ++f) y[i * F + f] += row[j] / z * v[j * F + f];
  }
  return y;
}

}  // namespace detail

inline std::vector<BenchRow> bench_backbones(const BenchOptions& opt) {
  std::vector<BenchRow> rows;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> nd;
  const std::size_t F = opt.features;
  for (std::size_t L : opt.lengths) {
    if (!num::is_pow2(L) || L < opt.sub_len) throw std::invalid_argument("bench: lengths must be powers of two >= sub_len");
    std::vector<float> u(L * F), k(L * F), q(L * F), kk(L * F), v(L * F);
    for (auto* buf : {&u, &k, &q, &kk, &v})
      for (auto& x : *buf) x = static_cast<float>(nd(rng));

    const SgconvSpec spec{L, opt.sub_len, 0.5, true, Upsample::nearest};
    nn::Rng wrng(opt.seed + L);
    auto w = sgconv_init<float>(spec, F, wrng);
    w.set_requires_grad(false);
    const num::Tensor<float> ut({L, F}, u);
    volatile double sink = 0.0;
    const double sg_ms = detail::best_ms(opt.repeats, [&] { sink = sink + sgconv_forward(ut, spec, w, L)[0]; });
    const std::size_t m = num::next_pow2(2 * L);
    rows.push_back({"sgconv", L, F, sgconv_parameter_count(L, opt.sub_len, F), sg_ms,
                    2 * m * sizeof(std::complex<double>) + 3 * L * F * sizeof(float)});

    const double dc_ms = detail::best_ms(opt.repeats, [&] { sink = sink + detail::direct_causal_conv(u, k, L, F)[0]; });
    rows.push_back({"direct_conv", L, F, L * F, dc_ms, 3 * L * F * sizeof(float)});

    BenchRow att{"dense_attention", L, F, 4 * F * F + 4 * F, std::numeric_limits<double>::quiet_NaN(),
                 dense_attention_bytes(L) + 4 * L * F * sizeof(float)};
    if (L <= opt.max_attention_len)
      att.wall_ms = detail::best_ms(opt.repeats, [&] { sink = sink + detail::dense_attention(q, kk, v, L, F)[0]; });
    rows.push_back(att);
  }
  return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "backbone,seq_len,features,params,wall_ms,peak_bytes\n";
  for (const auto& r : rows) {
    out << r.backbone << "," << r.seq_len << "," << r.features << "," << r.params << ",";
    if (std::isfinite(r.wall_ms)) out << r.wall_ms;
    out << "," << r.peak_bytes << "\n";
  }
}

// Mean of t(2L)/t(L) over consecutive lengths for one backbone.
inline double mean_doubling_ratio(const std::vector<BenchRow>& rows, const std::string& backbone) {
  std::vector<const BenchRow*> sel;
  for (const auto& r : rows)
    if (r.backbone == backbone && std::isfinite(r.wall_ms)) sel.push_back(&r);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 1; i < sel.size(); ++i) {
    if (sel[i]->seq_len != 2 * sel[i - 1]->seq_len) continue;
    sum += sel[i]->wall_ms / sel[i - 1]->wall_ms;
    ++n;
  }
  if (n == 0) throw std::domain_error("mean_doubling_ratio: no consecutive doublings for " + backbone);
  return sum / static_cast<double>(n);
}

}  // namespace codebrain::ssm
