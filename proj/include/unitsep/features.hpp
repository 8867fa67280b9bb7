// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <memory>
#include <sstream>
#include <string>

#include "unitsep/mel.hpp"

namespace unitsep {

// Number of feature/unit frames for a waveform of T samples. This is the
// single source of truth for target-length alignment: every extractor,
// quantizer and classifier output is trimmed to this count.
inline std::size_t frame_count(std::size_t T, int hop, int downsample_factor) {
  if (hop < 1 || downsample_factor < 1) {
    throw ConfigError("frame_count: hop and downsample_factor must be >= 1");
  }
  const std::size_t step = static_cast<std::size_t>(hop) * downsample_factor;
  return (T + step - 1) / step;
}

// Identifies the feature-extractor configuration a codebook or unit sequence
// was produced with. Quantize/lookup/synthesis refuse mismatched pairs.
struct ExtractorFingerprint {
  int hop = 0;
  int downsample = 1;
  int dim = 0;
  int sample_rate = 0;

  int frame_hop() const { return hop * downsample; }

  std::string to_string() const {
    std::ostringstream os;
    os << "hop=" << hop << ":ds=" << downsample << ":d=" << dim
       << ":sr=" << sample_rate;
    return os.str();
  }
  bool operator==(const ExtractorFingerprint&) const = default;
};

// Frame-synchronous feature extractor interface. The discretizer accepts any
// implementation whose output honors frame_count(); this is where a
// pretrained self-supervised encoder would plug in.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureSequence extract(const Waveform& w) const = 0;
  virtual ExtractorFingerprint fingerprint() const = 0;
};

struct LogMelConfig {
  int sample_rate = 8000;
  int window_size = 256;
  int hop = 160;
  int num_mels = 40;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 -> sample_rate/2
  int downsample = 1;

  double fmax_or_nyquist() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }

  static LogMelConfig for_rate(int sample_rate) {
    LogMelConfig c;
    c.sample_rate = sample_rate;
    c.window_size = sample_rate >= 16000 ? 1024 : 512;
    c.hop = sample_rate / 50;  // 20 ms unit rate
    return c;
  }
};

// Default extractor: log-mel filterbank energies at a fixed frame rate.
class LogMelExtractor final : public FeatureExtractor {
 public:
  explicit LogMelExtractor(const LogMelConfig& cfg) : cfg_(cfg) {}

  FeatureSequence extract(const Waveform& w) const override {
    if (w.sample_rate != cfg_.sample_rate) {
      throw ShapeError("LogMelExtractor: waveform rate " + std::to_string(w.sample_rate) +
                       " != extractor rate " + std::to_string(cfg_.sample_rate));
    }
    FeatureSequence feats =
        log_mel(stft(w, cfg_.window_size, cfg_.hop), cfg_.num_mels, cfg_.fmin,
                cfg_.fmax_or_nyquist());
    const std::size_t want = frame_count(w.size(), cfg_.hop, cfg_.downsample);
    if (cfg_.downsample > 1) {
      Eigen::MatrixXd strided(want, feats.frames.cols());
      for (std::size_t i = 0; i < want; ++i) {
        strided.row(i) = feats.frames.row(static_cast<Eigen::Index>(i * cfg_.downsample));
      }
      feats.frames = std::move(strided);
    } else {
      feats.frames.conservativeResize(static_cast<Eigen::Index>(want), Eigen::NoChange);
    }
    feats.hop = cfg_.hop * cfg_.downsample;
    return feats;
  }

  ExtractorFingerprint fingerprint() const override {
    return {cfg_.hop, cfg_.downsample, cfg_.num_mels, cfg_.sample_rate};
  }

  const LogMelConfig& config() const { return cfg_; }

 private:
  LogMelConfig cfg_;
};

}  // namespace unitsep
