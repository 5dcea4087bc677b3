#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace mosbench {

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey. Size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// O(n^2) DFT for sizes that are not a power of two.
inline std::vector<std::complex<double>> dft_direct(
    const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    double re = 0.0, im = 0.0;
    for (size_t t = 0; t < n; ++t) {
      const double ang =
          -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n);
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    out[k] = {re, im};
  }
  return out;
}

// |X_k|^2 for k = 0..n/2 of a real frame.
inline std::vector<double> power_spectrum(const std::vector<double>& frame) {
  const size_t n = frame.size();
  std::vector<double> power(n / 2 + 1);
  if (is_pow2(n)) {
    std::vector<std::complex<double>> a(n);
    for (size_t i = 0; i < n; ++i) a[i] = frame[i];
    fft_radix2(a);
    for (size_t k = 0; k <= n / 2; ++k) power[k] = std::norm(a[k]);
  } else {
    const auto a = dft_direct(frame);
    for (size_t k = 0; k <= n / 2; ++k) power[k] = std::norm(a[k]);
  }
  return power;
}

}  // namespace mosbench
