#pragma once

// Radix-2 FFT, exact-length DFT (Bluestein for non powers of two) and causal
// linear convolution. All transforms run in double precision.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <ranges>
#include <stdexcept>
#include <vector>

namespace codebrain::num {

using cplx = std::complex<double>;

struct ComplexSpectrum {
  std::vector<double> re;
  std::vector<double> im;

  std::size_t size() const { return re.size(); }
};

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative Cooley-Tukey. Inverse is unnormalized.
inline void fft_inplace(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) throw std::invalid_argument("fft_inplace: length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    // Twiddles computed directly per index keep rounding error flat in len.
    std::vector<cplx> w(half);
    for (std::size_t k = 0; k < half; ++k) w[k] = std::polar(1.0, ang * static_cast<double>(k));
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + half] * w[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

namespace detail {

// Exact length-n DFT through a power-of-two circular convolution.
inline std::vector<cplx> bluestein(const std::vector<cplx>& x, bool inverse) {
  const std::size_t n = x.size();
  const std::size_t m = next_pow2(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n avoids precision loss in the angle for large k.
    const auto k2 = static_cast<double>((k * k) % (2 * n));
    chirp[k] = std::polar(1.0, sign * std::numbers::pi * k2 / static_cast<double>(n));
  }
  std::vector<cplx> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
  fft_inplace(a, false);
  fft_inplace(b, false);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  fft_inplace(a, true);
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k] / static_cast<double>(m);
  return out;
}

inline std::vector<cplx> transform(std::vector<cplx> x, bool inverse) {
  if (is_pow2(x.size())) {
    fft_inplace(x, inverse);
    return x;
  }
  return bluestein(x, inverse);
}

}  // namespace detail

// X[k] = sum_n x[n] exp(-j 2 pi k n / N), for any N >= 1.
template <std::ranges::contiguous_range R>
ComplexSpectrum dft(const R& signal) {
  const std::size_t n = std::ranges::size(signal);
  if (n == 0) throw std::invalid_argument("dft: empty input");
  std::vector<cplx> x(n);
  std::size_t i = 0;
  for (const auto& v : signal) x[i++] = cplx(static_cast<double>(v), 0.0);
  const auto X = detail::transform(std::move(x), false);
  ComplexSpectrum s;
  s.re.resize(n);
  s.im.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    s.re[k] = X[k].real();
    s.im[k] = X[k].imag();
  }
  return s;
}

// Real part of the normalized inverse transform.
inline std::vector<double> idft(const ComplexSpectrum& spectrum) {
  const std::size_t n = spectrum.size();
  if (n == 0 || spectrum.im.size() != n) throw std::invalid_argument("idft: malformed spectrum");
  std::vector<cplx> X(n);
  for (std::size_t k = 0; k < n; ++k) X[k] = cplx(spectrum.re[k], spectrum.im[k]);
  const auto x = detail::transform(std::move(X), true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i].real() / static_cast<double>(n);
  return out;
}

// y[t] = sum_{s<=t} kernel[s] * u[t-s], t < N. Operands are zero-padded to a
// power of two >= 2N-1 so the circular product equals the linear convolution.
template <std::ranges::contiguous_range R1, std::ranges::contiguous_range R2>
std::vector<double> fft_convolve(const R1& u, const R2& kernel) {
  const std::size_t n = std::ranges::size(u);
  if (n != std::ranges::size(kernel)) throw std::invalid_argument("fft_convolve: length mismatch");
  if (n == 0) throw std::invalid_argument("fft_convolve: empty input");
  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<cplx> a(m), b(m);
  std::size_t i = 0;
  for (const auto& v : u) a[i++] = static_cast<double>(v);
  i = 0;
  for (const auto& v : kernel) b[i++] = static_cast<double>(v);
  fft_inplace(a, false);
  fft_inplace(b, false);
  for (std::size_t k = 0; k < m; ++k) a[k] *= b[k];
  fft_inplace(a, true);
  std::vector<double> y(n);
  for (std::size_t t = 0; t < n; ++t) y[t] = a[t].real() / static_cast<double>(m);
  return y;
}

// O(N^2) reference with the same contract as fft_convolve.
template <std::ranges::contiguous_range R1, std::ranges::contiguous_range R2>
std::vector<double> direct_convolve(const R1& u, const R2& kernel) {
  const std::size_t n = std::ranges::size(u);
  if (n != std::ranges::size(kernel)) throw std::invalid_argument("direct_convolve: length mismatch");
  const auto* up = std::ranges::data(u);
  const auto* kp = std::ranges::data(kernel);
  std::vector<double> y(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t s = 0; s <= t; ++s) acc += static_cast<double>(kp[s]) * static_cast<double>(up[t - s]);
    y[t] = acc;
  }
  return y;
}

}  // namespace codebrain::num
