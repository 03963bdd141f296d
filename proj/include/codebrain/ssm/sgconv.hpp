#pragma once

// Structured global convolution: a length-L depthwise kernel assembled from
// N = log2(L/d) + 1 short sub-kernels. Sub-kernel i has d parameters per
// feature, is stretched to d, d, 2d, 4d, ... samples and scaled by alpha^i;
// the concatenation is divided by its L1 norm.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "codebrain/errors.hpp"
#include "codebrain/nn/layers.hpp"
#include "codebrain/numerics/fft.hpp"

namespace codebrain::ssm {

using num::Tensor;

enum class Upsample { nearest, linear };

struct SgconvSpec {
  std::size_t L = 64;
  std::size_t d = 8;
  double alpha = 0.5;
  bool normalize = true;
  Upsample upsample = Upsample::nearest;

  // Throws unless L / d is a power of two.
  static std::size_t sub_kernels(std::size_t L, std::size_t d) {
    if (d == 0 || L < d || L % d != 0 || !num::is_pow2(L / d))
      throw std::invalid_argument("sgconv: L / d must be a power of two");
    std::size_t n = 1;
    for (std::size_t r = L / d; r > 1; r >>= 1) ++n;
    return n;
  }
  std::size_t sub_kernels() const { return sub_kernels(L, d); }

  // Stretched length of sub-kernel i.
  std::size_t sub_length(std::size_t i) const { return i == 0 ? d : (d << (i - 1)); }

  std::size_t parameters_per_feature() const { return sub_kernels() * d; }
};

// Smallest L = d * 2^k covering `length`.
inline std::size_t sgconv_length(std::size_t length, std::size_t d) {
  if (d == 0) throw std::invalid_argument("sgconv: d must be positive");
  std::size_t L = d;
  while (L < length) L <<= 1;
  return L;
}

namespace detail {

struct Tap {
  std::size_t out;  // kernel position
  std::size_t src;  // row in the stacked weight matrix
  double coef;
};

// Sparse linear map from stacked sub-kernel weights [N*d] to the raw kernel [L].
inline std::vector<Tap> kernel_taps(const SgconvSpec& spec) {
  const std::size_t n = spec.sub_kernels(), d = spec.d;
  std::vector<Tap> taps;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = spec.sub_length(i);
    const double decay = std::pow(spec.alpha, static_cast<double>(i));
    for (std::size_t p = 0; p < len; ++p) {
      if (spec.upsample == Upsample::nearest || len == d) {
        taps.push_back({offset + p, i * d + p * d / len, decay});
      } else {
        // Half-pixel aligned linear interpolation, edges clamped.
        double x = (static_cast<double>(p) + 0.5) * static_cast<double>(d) / static_cast<double>(len) - 0.5;
        x = std::clamp(x, 0.0, static_cast<double>(d - 1));
        const auto lo = static_cast<std::size_t>(std::floor(x));
        const std::size_t hi = std::min(lo + 1, d - 1);
        const double t = x - static_cast<double>(lo);
        taps.push_back({offset + p, i * d + lo, decay * (1.0 - t)});
        if (hi != lo && t > 0.0) taps.push_back({offset + p, i * d + hi, decay * t});
      }
    }
    offset += len;
  }
  return taps;
}

}  // namespace detail

// weights: [N*d x F], sub-kernel i in rows [i*d, (i+1)*d). Returns [L x F].
// Z is the per-feature L1 norm of the raw kernel and is differentiated through.
template <class T>
Tensor<T> build_kernel(const SgconvSpec& spec, const Tensor<T>& weights) {
  const std::size_t n = spec.sub_kernels(), d = spec.d, L = spec.L;
  if (weights.rank() != 2 || weights.dim(0) != n * d)
    throw std::invalid_argument("build_kernel: weights must be [N*d x features]");
  const std::size_t F = weights.cols();
  const auto taps = detail::kernel_taps(spec);
  std::vector<double> raw(L * F, 0.0);
  for (const auto& tp : taps)
    for (std::size_t f = 0; f < F; ++f) raw[tp.out * F + f] += tp.coef * weights[tp.src * F + f];
  std::vector<double> z(F, 1.0);
  if (spec.normalize) {
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0.0;
      for (std::size_t t = 0; t < L; ++t) s += std::abs(raw[t * F + f]);
      if (s == 0.0) throw NumericError("build_kernel: all-zero kernel cannot be normalized");
      z[f] = s;
    }
  }
  std::vector<T> out(L * F);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t f = 0; f < F; ++f) out[t * F + f] = static_cast<T>(raw[t * F + f] / z[f]);
  auto res = num::detail::result<T>("build_kernel", {L, F}, std::move(out), {&weights});
  num::detail::set_backward<T>(res, [wn = weights.node(), taps, raw = std::move(raw), z = std::move(z), L, F,
                                     norm = spec.normalize](const std::vector<T>& g) {
    if (!wn->requires_grad) return;
    // d(raw/Z)/d raw_t = (g_t - sign(raw_t) * sum_s g_s raw_s / Z) / Z
    std::vector<double> graw(L * F);
    for (std::size_t f = 0; f < F; ++f) {
      double dot = 0.0;
      if (norm)
        for (std::size_t t = 0; t < L; ++t) dot += static_cast<double>(g[t * F + f]) * raw[t * F + f];
      for (std::size_t t = 0; t < L; ++t) {
        const double r = raw[t * F + f];
        const double sign = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
        graw[t * F + f] = (g[t * F + f] - (norm ? sign * dot / z[f] : 0.0)) / z[f];
      }
    }
    for (const auto& tp : taps)
      for (std::size_t f = 0; f < F; ++f) wn->accumulate(tp.src * F + f, tp.coef * graw[tp.out * F + f]);
  });
  return res;
}

// Per-feature causal convolution of each segment of `seg_len` rows with the
// kernel built from `weights`. u: [segments*seg_len x F].
template <class T>
Tensor<T> sgconv_forward(const Tensor<T>& u, const SgconvSpec& spec, const Tensor<T>& weights,
                         std::size_t seg_len) {
  if (seg_len > spec.L) throw std::invalid_argument("sgconv_forward: sequence longer than kernel length L");
  return num::causal_conv(u, build_kernel(spec, weights), seg_len);
}

// Initial sub-kernel weights: standard normal scaled by 1/sqrt(d).
template <class T>
Tensor<T> sgconv_init(const SgconvSpec& spec, std::size_t features, nn::Rng& rng) {
  return nn::normal_param<T>({spec.sub_kernels() * spec.d, features}, 1.0 / std::sqrt(static_cast<double>(spec.d)),
                             rng);
}

}  // namespace codebrain::ssm
