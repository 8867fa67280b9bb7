// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>

#include "unitsep/stft.hpp"

namespace unitsep {

struct GriffinLimResult {
  Waveform waveform;
  // Spectral-convergence error ||mag - |STFT(w_i)||_F / ||mag||_F after each
  // iteration; non-increasing by construction of the projections.
  std::vector<double> errors;
};

// Iterative phase reconstruction from a magnitude spectrogram
// (num_frames x num_bins). Deterministic: the initial phase advances each
// bin linearly across frames (the phase a bin-centered sinusoid would have),
// which is already near-consistent for tonal content. All-zero magnitude
// returns silence.
inline GriffinLimResult griffin_lim(const Eigen::MatrixXd& magnitude, int iterations,
                                    int window_size, int hop, int sample_rate,
                                    std::size_t out_length = 0) {
  if (iterations < 1) throw ConfigError("griffin_lim: iterations must be >= 1");
  if (magnitude.rows() < 1) throw ShapeError("griffin_lim: empty magnitude");
  if ((magnitude.array() < 0.0).any()) {
    throw ShapeError("griffin_lim: magnitude must be nonnegative");
  }
  if (magnitude.cols() != window_size / 2 + 1) {
    throw ShapeError("griffin_lim: magnitude width does not match window_size/2 + 1");
  }
  const std::size_t length =
      out_length > 0 ? out_length
                     : static_cast<std::size_t>((magnitude.rows() - 1) * hop) + 1;

  GriffinLimResult result;
  result.waveform.sample_rate = sample_rate;

  if (magnitude.norm() == 0.0) {
    result.waveform.samples.assign(length, 0.0);
    result.errors.assign(iterations, 0.0);
    return result;
  }

  // Align the target frame count with what stft() of a length-`length`
  // signal produces, so the projection pair is consistent.
  const Eigen::Index frames_needed = static_cast<Eigen::Index>(length / hop) + 1;
  Eigen::MatrixXd target = Eigen::MatrixXd::Zero(frames_needed, magnitude.cols());
  const Eigen::Index copy_rows = std::min(frames_needed, magnitude.rows());
  target.topRows(copy_rows) = magnitude.topRows(copy_rows);
  const double target_norm = target.norm();
  if (target_norm == 0.0) {
    result.waveform.samples.assign(length, 0.0);
    result.errors.assign(iterations, 0.0);
    return result;
  }

  ComplexSpectrogram spec;
  spec.window_size = window_size;
  spec.hop = hop;
  spec.original_length = length;
  spec.sample_rate = sample_rate;
  spec.frames.resize(target.rows(), target.cols());
  for (Eigen::Index f = 0; f < target.rows(); ++f) {
    for (Eigen::Index k = 0; k < target.cols(); ++k) {
      const double phase = 2.0 * std::numbers::pi * static_cast<double>(k) *
                           static_cast<double>(f) * hop / window_size;
      spec.frames(f, k) = std::polar(target(f, k), phase);
    }
  }

  for (int it = 0; it < iterations; ++it) {
    const Waveform w = istft(spec);
    const ComplexSpectrogram consistent = stft(w, window_size, hop);
    result.errors.push_back((target - consistent.frames.cwiseAbs()).norm() / target_norm);
    for (Eigen::Index f = 0; f < spec.frames.rows(); ++f) {
      for (Eigen::Index k = 0; k < spec.frames.cols(); ++k) {
        const std::complex<double> c = consistent.frames(f, k);
        const double a = std::abs(c);
        spec.frames(f, k) = a > 0.0 ? target(f, k) * (c / a)
                                    : std::complex<double>(target(f, k), 0.0);
      }
    }
  }
  result.waveform = istft(spec);
  return result;
}

}  // namespace unitsep
