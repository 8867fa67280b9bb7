// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "unitsep/stft.hpp"

namespace unitsep {

// Frame-synchronous real-valued features; one row per frame.
struct FeatureSequence {
  Eigen::MatrixXd frames;  // N x D
  int hop = 0;             // waveform samples per frame step
  int sample_rate = 0;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

inline constexpr double kLogMelFloor = 1e-10;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank (num_mels x num_bins), area-normalized so a flat
// power spectrum maps to a roughly flat mel profile.
inline Eigen::MatrixXd mel_filterbank(int num_mels, int window_size, int sample_rate,
                                      double fmin, double fmax) {
  if (num_mels < 1) throw ConfigError("mel_filterbank: num_mels must be >= 1");
  if (!(fmin < fmax) || fmax > sample_rate / 2.0 + 1e-9) {
    throw ConfigError("mel_filterbank: need fmin < fmax <= sample_rate/2");
  }
  const int num_bins = window_size / 2 + 1;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);

  std::vector<double> edges(num_mels + 2);
  for (int i = 0; i < num_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (num_mels + 1));
  }

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(num_mels, num_bins);
  for (int m = 0; m < num_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < num_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / window_size;
      double v = 0.0;
      if (f > lo && f < mid) {
        v = (f - lo) / (mid - lo);
      } else if (f >= mid && f < hi) {
        v = (hi - f) / (hi - mid);
      }
      fb(m, k) = v * norm;
    }
    if (fb.row(m).maxCoeff() <= 0.0) {
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " is empty; num_mels too large for this resolution");
    }
  }
  return fb;
}

// log(mel . |S|^2 + eps). Power convention: doubling the signal amplitude
// shifts every output by log(4).
inline FeatureSequence log_mel(const ComplexSpectrogram& s, int num_mels, double fmin,
                               double fmax) {
  const Eigen::MatrixXd fb =
      mel_filterbank(num_mels, s.window_size, s.sample_rate, fmin, fmax);
  FeatureSequence out;
  out.hop = s.hop;
  out.sample_rate = s.sample_rate;
  const Eigen::MatrixXd power = s.frames.cwiseAbs2();        // N x bins
  out.frames = (power * fb.transpose()).array() + kLogMelFloor;  // N x mels
  out.frames = out.frames.array().log();
  return out;
}

// Moore-Penrose pseudo-inverse of the filterbank (num_bins x num_mels);
// used to map mel power back to a linear power spectrum. Callers clip the
// result at zero before feeding magnitudes to phase reconstruction.
inline Eigen::MatrixXd mel_pseudo_inverse(const Eigen::MatrixXd& fb) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(fb, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double tol = 1e-12 * sv(0) * std::max(fb.rows(), fb.cols());
  Eigen::VectorXd inv = sv;
  for (Eigen::Index i = 0; i < sv.size(); ++i) inv(i) = sv(i) > tol ? 1.0 / sv(i) : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace unitsep
