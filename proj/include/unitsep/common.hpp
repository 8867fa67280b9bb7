// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace unitsep {

// Error categories are kept distinct so callers (and tests) can tell apart
// unreadable files, malformed content, shape/contract violations and bad
// configuration.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All ratio metrics (SDR/SIR/SAR/SI-SNR) are capped to +-60 dB so that
// perfect-reconstruction and degenerate cases stay finite under aggregation.
inline constexpr double kDbCap = 60.0;

inline double clamp_db(double db) {
  if (std::isnan(db)) return -kDbCap;
  return std::clamp(db, -kDbCap, kDbCap);
}

// 10*log10(num/den) with the +-60 dB cap. Zero denominator pins to the cap,
// zero numerator to the floor.
inline double ratio_db(double num, double den) {
  if (num <= 0.0) return -kDbCap;
  if (den <= 0.0) return kDbCap;
  return clamp_db(10.0 * std::log10(num / den));
}

// FNV-1a, used for content hashes in stage manifests and fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace unitsep
