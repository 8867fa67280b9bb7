// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "unitsep/common.hpp"

namespace unitsep {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace detail {

struct FftPlan {
  std::size_t n = 0;
  std::vector<std::size_t> bitrev;
  std::vector<std::complex<double>> twiddle;  // forward twiddles, by stage
};

inline const FftPlan& fft_plan(std::size_t n) {
  // One plan cache per thread; stft/istft stay safe to call concurrently.
  thread_local std::unordered_map<std::size_t, FftPlan> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  FftPlan plan;
  plan.n = n;
  plan.bitrev.resize(n);
  std::size_t log2n = 0;
  while ((std::size_t{1} << log2n) < n) ++log2n;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < log2n; ++b) {
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (log2n - 1 - b);
    }
    plan.bitrev[i] = r;
  }
  plan.twiddle.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    plan.twiddle[k] = {std::cos(a), std::sin(a)};
  }
  return cache.emplace(n, std::move(plan)).first->second;
}

}  // namespace detail

// In-place iterative radix-2 FFT. Unnormalized forward; inverse divides by n.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (!is_power_of_two(n)) throw ShapeError("fft: size must be a power of two");
  const auto& plan = detail::fft_plan(n);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = plan.bitrev[i];
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len >> 1;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        std::complex<double> w = plan.twiddle[k * stride];
        if (inverse) w = std::conj(w);
        const std::complex<double> u = a[start + k];
        const std::complex<double> t = w * a[start + k + half];
        a[start + k] = u + t;
        a[start + k + half] = u - t;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

// Real-input FFT; returns the n/2+1 nonnegative-frequency bins.
inline std::vector<std::complex<double>> rfft(const double* x, std::size_t n) {
  std::vector<std::complex<double>> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = {x[i], 0.0};
  fft_inplace(a, false);
  a.resize(n / 2 + 1);
  return a;
}

// Inverse of rfft: reconstructs the length-n real signal from n/2+1 bins.
inline std::vector<double> irfft(const std::complex<double>* bins, std::size_t n) {
  std::vector<std::complex<double>> a(n);
  for (std::size_t k = 0; k <= n / 2; ++k) a[k] = bins[k];
  for (std::size_t k = n / 2 + 1; k < n; ++k) a[k] = std::conj(bins[n - k]);
  fft_inplace(a, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace unitsep
