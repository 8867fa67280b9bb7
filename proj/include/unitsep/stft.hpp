// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "unitsep/fft.hpp"
#include "unitsep/wav.hpp"

namespace unitsep {

// Centered complex STFT. Rows are frames, columns bins (window/2 + 1).
struct ComplexSpectrogram {
  Eigen::MatrixXcd frames;
  int window_size = 0;
  int hop = 0;
  std::size_t original_length = 0;
  int sample_rate = 0;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index num_bins() const { return frames.cols(); }
};

namespace detail {

// Periodic Hann; zero at n=0, which the overlap-add normalization handles.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

// Reflect indexing (abcb|abc|babc style, no edge duplication).
inline std::size_t reflect_index(long long i, long long n) {
  if (n == 1) return 0;
  const long long p = 2 * (n - 1);
  i = ((i % p) + p) % p;
  return static_cast<std::size_t>(i < n ? i : p - i);
}

inline void check_stft_args(int window_size, int hop) {
  if (!is_power_of_two(static_cast<std::size_t>(window_size))) {
    throw ShapeError("stft: window_size must be a power of two");
  }
  if (hop < 1 || hop > window_size) {
    throw ShapeError("stft: need 1 <= hop <= window_size");
  }
}

}  // namespace detail

// Hann-windowed, centered (reflect-padded) STFT.
// num_frames == floor(T/hop) + 1.
inline ComplexSpectrogram stft(const Waveform& w, int window_size, int hop) {
  detail::check_stft_args(window_size, hop);
  if (w.samples.empty()) throw ShapeError("stft: empty waveform");

  const long long T = static_cast<long long>(w.samples.size());
  const int bins = window_size / 2 + 1;
  const long long num_frames = T / hop + 1;
  const auto win = detail::hann_window(window_size);

  ComplexSpectrogram s;
  s.window_size = window_size;
  s.hop = hop;
  s.original_length = w.samples.size();
  s.sample_rate = w.sample_rate;
  s.frames.resize(num_frames, bins);

  std::vector<double> buf(window_size);
  for (long long f = 0; f < num_frames; ++f) {
    const long long start = f * hop - window_size / 2;
    for (int n = 0; n < window_size; ++n) {
      buf[n] = w.samples[detail::reflect_index(start + n, T)] * win[n];
    }
    const auto spec = rfft(buf.data(), window_size);
    for (int k = 0; k < bins; ++k) s.frames(f, k) = spec[k];
  }
  return s;
}

// Overlap-add inverse with synthesis-window normalization. Reconstruction is
// exact (up to rounding) wherever the window power coverage is nonzero.
inline Waveform istft(const ComplexSpectrogram& s) {
  detail::check_stft_args(s.window_size, s.hop);
  if (s.frames.cols() != s.window_size / 2 + 1) {
    throw ShapeError("istft: num_bins does not match window_size/2 + 1");
  }
  if (s.original_length == 0 || s.frames.rows() == 0) {
    throw ShapeError("istft: empty spectrogram");
  }

  const long long T = static_cast<long long>(s.original_length);
  const int W = s.window_size;
  const auto win = detail::hann_window(W);

  std::vector<double> acc(s.original_length, 0.0);
  std::vector<double> norm(s.original_length, 0.0);
  std::vector<std::complex<double>> row(s.frames.cols());

  for (long long f = 0; f < s.frames.rows(); ++f) {
    for (Eigen::Index k = 0; k < s.frames.cols(); ++k) row[k] = s.frames(f, k);
    const auto frame = irfft(row.data(), W);
    const long long start = f * s.hop - W / 2;
    for (int n = 0; n < W; ++n) {
      const long long t = start + n;
      if (t < 0 || t >= T) continue;
      acc[t] += win[n] * frame[n];
      norm[t] += win[n] * win[n];
    }
  }

  Waveform out;
  out.sample_rate = s.sample_rate;
  out.samples.resize(s.original_length);
  for (std::size_t t = 0; t < s.original_length; ++t) {
    out.samples[t] = norm[t] > 1e-12 ? acc[t] / norm[t] : 0.0;
  }
  return out;
}

}  // namespace unitsep
