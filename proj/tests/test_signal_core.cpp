// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "unitsep/features.hpp"
#include "unitsep/griffin_lim.hpp"
#include "unitsep/rng.hpp"
#include "unitsep/wav.hpp"

using namespace unitsep;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "unitsep_signal_tests";
  fs::create_directories(dir);
  return dir;
}

Waveform sine(double freq, double amplitude, int sample_rate, std::size_t n) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    w.samples[t] = amplitude * std::sin(2.0 * std::numbers::pi * freq * t / sample_rate);
  }
  return w;
}

Waveform noise(int sample_rate, std::size_t n, std::uint64_t seed, double amp = 0.3) {
  Rng rng(seed);
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (auto& s : w.samples) s = amp * rng.uniform(-1.0, 1.0);
  return w;
}

// Minimal raw WAV writer so load_wav is exercised against bytes we control.
void write_raw_wav(const fs::path& path, const std::vector<std::int16_t>& pcm,
                   std::uint32_t rate, std::uint16_t channels, std::uint16_t bits) {
  std::ofstream f(path, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(1);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  f.write("data", 4);
  u32(data_bytes);
  f.write(reinterpret_cast<const char*>(pcm.data()), data_bytes);
}

}  // namespace

TEST_CASE("fft matches naive dft", "[fft]") {
  Rng rng(7);
  for (std::size_t n : {8u, 64u, 256u}) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const auto want = oracles::naive_dft(x);
    const auto got = rfft(x.data(), n);
    for (std::size_t k = 0; k <= n / 2; ++k) {
      REQUIRE(std::abs(got[k] - want[k]) < 1e-9 * (1.0 + std::abs(want[k])));
    }
    const auto back = irfft(got.data(), n);
    for (std::size_t t = 0; t < n; ++t) {
      REQUIRE(back[t] == Catch::Approx(x[t]).margin(1e-12));
    }
  }
}

TEST_CASE("load_wav of digital silence", "[wav]") {
  const auto path = temp_dir() / "silence.wav";
  write_raw_wav(path, std::vector<std::int16_t>(8000, 0), 8000, 1, 16);
  const Waveform w = load_wav(path.string());
  REQUIRE(w.sample_rate == 8000);
  REQUIRE(w.size() == 8000);
  for (double s : w.samples) REQUIRE(s == 0.0);
}

TEST_CASE("load_wav scaling of max-amplitude sample", "[wav]") {
  const auto path = temp_dir() / "peak.wav";
  write_raw_wav(path, {32767, -32768, 0}, 8000, 1, 16);
  const Waveform w = load_wav(path.string());
  REQUIRE(w.samples[0] == 32767.0 / 32768.0);
  REQUIRE(w.samples[1] == -1.0);
  REQUIRE(w.samples[2] == 0.0);
}

TEST_CASE("wav round trip is sample exact", "[wav]") {
  // Already-quantized signals survive save/load bit exactly.
  Rng rng(11);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(4321);
  for (auto& s : w.samples) {
    s = static_cast<double>(static_cast<int>(rng.uniform_int(65536)) - 32768) / 32768.0;
  }
  const auto path = temp_dir() / "roundtrip.wav";
  save_wav(w, path.string());
  const Waveform r = load_wav(path.string());
  REQUIRE(r.sample_rate == w.sample_rate);
  REQUIRE(r.samples == w.samples);
}

TEST_CASE("save_wav clips out-of-range samples", "[wav]") {
  Waveform w;
  w.sample_rate = 8000;
  w.samples = {2.0, -3.0, 0.0};
  const auto path = temp_dir() / "clipped.wav";
  save_wav(w, path.string());
  const Waveform r = load_wav(path.string());
  REQUIRE(r.samples[0] == 32767.0 / 32768.0);  // max positive PCM code
  REQUIRE(r.samples[1] == -1.0);
  REQUIRE(r.samples[2] == 0.0);
}

TEST_CASE("wav error reporting is distinct", "[wav]") {
  const auto dir = temp_dir();
  REQUIRE_THROWS_AS(load_wav((dir / "missing.wav").string()), IoError);

  const auto stereo = dir / "stereo.wav";
  write_raw_wav(stereo, std::vector<std::int16_t>(64, 0), 8000, 2, 16);
  REQUIRE_THROWS_WITH(load_wav(stereo.string()), Catch::Matchers::ContainsSubstring("mono"));

  const auto eightbit = dir / "eightbit.wav";
  write_raw_wav(eightbit, std::vector<std::int16_t>(64, 0), 8000, 1, 8);
  REQUIRE_THROWS_WITH(load_wav(eightbit.string()),
                      Catch::Matchers::ContainsSubstring("encoding"));

  const auto badrate = dir / "badrate.wav";
  write_raw_wav(badrate, std::vector<std::int16_t>(64, 0), 44100, 1, 16);
  REQUIRE_THROWS_WITH(load_wav(badrate.string()),
                      Catch::Matchers::ContainsSubstring("sample rate"));

  const auto notwav = dir / "notwav.wav";
  std::ofstream(notwav) << "definitely not audio";
  REQUIRE_THROWS_AS(load_wav(notwav.string()), FormatError);
}

TEST_CASE("stft of silence is zero", "[stft]") {
  Waveform w;
  w.sample_rate = 8000;
  w.samples.assign(4000, 0.0);
  const auto s = stft(w, 256, 128);
  REQUIRE(s.num_frames() == 4000 / 128 + 1);
  REQUIRE(s.num_bins() == 129);
  REQUIRE(s.frames.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stft localizes a bin-centered sine", "[stft]") {
  const int sr = 8000, W = 256, hop = 128;
  const int bin = 16;
  const double freq = static_cast<double>(bin) * sr / W;  // exactly on a bin
  const auto s = stft(sine(freq, 0.8, sr, 8000), W, hop);
  // Peak-bin check against the analytic frequency, away from edges.
  for (Eigen::Index f = 2; f + 2 < s.num_frames(); ++f) {
    Eigen::Index peak;
    s.frames.row(f).cwiseAbs().maxCoeff(&peak);
    REQUIRE(peak == bin);
  }
}

TEST_CASE("stft satisfies Parseval per frame", "[stft]") {
  // Direct summation oracle: |FFT|^2 summed over a full spectrum equals
  // W * (windowed frame energy).
  const int W = 256, hop = 64;
  const Waveform w = noise(8000, 2000, 3);
  const auto win = detail::hann_window(W);
  const auto s = stft(w, W, hop);
  const long long T = static_cast<long long>(w.size());
  for (Eigen::Index f = 0; f < s.num_frames(); f += 5) {
    double time_energy = 0.0;
    const long long start = static_cast<long long>(f) * hop - W / 2;
    for (int n = 0; n < W; ++n) {
      const double v = w.samples[detail::reflect_index(start + n, T)] * win[n];
      time_energy += v * v;
    }
    double freq_energy = std::norm(s.frames(f, 0)) + std::norm(s.frames(f, W / 2));
    for (int k = 1; k < W / 2; ++k) freq_energy += 2.0 * std::norm(s.frames(f, k));
    REQUIRE(freq_energy / W == Catch::Approx(time_energy).epsilon(1e-9).margin(1e-12));
  }
}

TEST_CASE("stft istft round trip", "[stft]") {
  Rng rng(23);
  for (std::size_t len : {1000u, 4097u, 16000u, 32000u}) {
    const Waveform w = noise(8000, len, rng.raw());
    const auto s = stft(w, 256, 64);
    const Waveform back = istft(s);
    REQUIRE(back.size() == w.size());
    double max_err = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      max_err = std::max(max_err, std::abs(back.samples[t] - w.samples[t]));
    }
    REQUIRE(max_err < 1e-6);
  }
}

TEST_CASE("istft of zero spectrogram is silence and istft is linear", "[stft]") {
  const Waveform w = noise(8000, 3000, 5);
  auto s = stft(w, 256, 128);
  const Waveform base = istft(s);

  auto zero = s;
  zero.frames.setZero();
  for (double v : istft(zero).samples) REQUIRE(v == 0.0);

  auto scaled = s;
  scaled.frames *= 2.5;
  const Waveform twice = istft(scaled);
  for (std::size_t t = 0; t < w.size(); ++t) {
    REQUIRE(twice.samples[t] == Catch::Approx(2.5 * base.samples[t]).margin(1e-12));
  }
}

TEST_CASE("stft and istft reject malformed input", "[stft]") {
  Waveform empty;
  empty.sample_rate = 8000;
  REQUIRE_THROWS_AS(stft(empty, 256, 128), ShapeError);
  const Waveform w = noise(8000, 1000, 9);
  REQUIRE_THROWS_AS(stft(w, 300, 100), ShapeError);  // not a power of two
  REQUIRE_THROWS_AS(stft(w, 256, 512), ShapeError);  // hop > window

  auto s = stft(w, 256, 128);
  s.window_size = 512;  // bins no longer match
  REQUIRE_THROWS_AS(istft(s), ShapeError);
}

TEST_CASE("log_mel floor, shift law and dimensions", "[mel]") {
  Waveform silence;
  silence.sample_rate = 8000;
  silence.samples.assign(2000, 0.0);
  const auto feats = log_mel(stft(silence, 256, 160), 40, 0.0, 4000.0);
  REQUIRE(feats.dim() == 40);
  for (Eigen::Index i = 0; i < feats.frames.size(); ++i) {
    REQUIRE(feats.frames.data()[i] == Catch::Approx(std::log(1e-10)));
  }

  const Waveform tone = sine(440.0, 0.3, 8000, 4000);
  Waveform doubled = tone;
  for (auto& s : doubled.samples) s *= 2.0;
  const auto a = log_mel(stft(tone, 256, 160), 40, 0.0, 4000.0);
  const auto b = log_mel(stft(doubled, 256, 160), 40, 0.0, 4000.0);
  // Power convention: doubling amplitude adds log(4) wherever the signal
  // dominates the floor.
  int checked = 0;
  for (Eigen::Index f = 0; f < a.num_frames(); ++f) {
    for (Eigen::Index d = 0; d < a.dim(); ++d) {
      if (a.frames(f, d) > std::log(1e-10) + 16.0) {
        REQUIRE(b.frames(f, d) - a.frames(f, d) ==
                Catch::Approx(std::log(4.0)).margin(1e-5));
        ++checked;
      }
    }
  }
  REQUIRE(checked > 20);
}

TEST_CASE("log_mel of white noise is roughly flat", "[mel]") {
  // Statistical check over many frames: area-normalized filters give a flat
  // mel profile for a flat spectrum.
  const Waveform w = noise(8000, 40 * 160 + 16000, 41, 0.5);
  const auto feats = log_mel(stft(w, 256, 160), 30, 100.0, 3900.0);
  REQUIRE(feats.num_frames() >= 100);
  Eigen::VectorXd mean = feats.frames.colwise().mean();
  const double mid = mean.segment(2, mean.size() - 4).mean();
  for (Eigen::Index d = 2; d < mean.size() - 2; ++d) {
    REQUIRE(std::abs(mean(d) - mid) < 0.7);  // within ~3 dB of the average
  }
}

TEST_CASE("log_mel rejects a degenerate filterbank", "[mel]") {
  const Waveform w = noise(8000, 1000, 13);
  REQUIRE_THROWS_AS(log_mel(stft(w, 256, 128), 200, 0.0, 4000.0), ConfigError);
  REQUIRE_THROWS_AS(log_mel(stft(w, 256, 128), 40, 3999.0, 100.0), ConfigError);
}

TEST_CASE("griffin_lim reconstructs a sine magnitude", "[griffinlim]") {
  const int W = 256, hop = 64, sr = 8000;
  const Waveform ref = sine(500.0, 0.6, sr, 8000);
  const auto mag = stft(ref, W, hop).frames.cwiseAbs().eval();
  const auto res = griffin_lim(mag, 60, W, hop, sr, ref.size());
  REQUIRE(res.errors.size() == 60);
  REQUIRE(res.errors.back() < 0.1);
  REQUIRE(res.waveform.size() == ref.size());
}

TEST_CASE("griffin_lim error sequence is non-increasing", "[griffinlim]") {
  const int W = 256, hop = 64, sr = 8000;
  const Waveform ref = noise(sr, 6000, 17);
  const auto mag = stft(ref, W, hop).frames.cwiseAbs().eval();
  const auto res = griffin_lim(mag, 30, W, hop, sr, ref.size());
  for (std::size_t i = 1; i < res.errors.size(); ++i) {
    REQUIRE(res.errors[i] <= res.errors[i - 1] + 1e-10);
  }
}

TEST_CASE("griffin_lim of zero magnitude returns silence", "[griffinlim]") {
  const Eigen::MatrixXd mag = Eigen::MatrixXd::Zero(20, 129);
  const auto res = griffin_lim(mag, 5, 256, 128, 8000, 1000);
  REQUIRE(res.waveform.size() == 1000);
  for (double s : res.waveform.samples) REQUIRE(s == 0.0);
  REQUIRE_THROWS_AS(griffin_lim(mag, 0, 256, 128, 8000), ConfigError);
}

TEST_CASE("frame_count arithmetic and monotonicity", "[features]") {
  REQUIRE(frame_count(8000, 160, 1) == 50);  // 20 ms frames on 1 s at 8 kHz
  REQUIRE(frame_count(1, 160, 1) == 1);
  REQUIRE(frame_count(1, 7, 1) == 1);
  REQUIRE(frame_count(16000, 160, 1) == 100);
  REQUIRE(frame_count(16000, 160, 2) == 50);
  std::size_t prev = 0;
  for (std::size_t T = 1; T < 2000; T += 13) {
    const std::size_t n = frame_count(T, 160, 1);
    REQUIRE(n >= prev);
    prev = n;
  }
  REQUIRE_THROWS_AS(frame_count(100, 0, 1), ConfigError);
}

TEST_CASE("extractor length always equals frame_count", "[features]") {
  // Property check: quantizer-facing feature length is frame_count(T).
  LogMelConfig cfg = LogMelConfig::for_rate(8000);
  const LogMelExtractor extractor(cfg);
  Rng rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t T = 1 + rng.uniform_int(20000);
    const Waveform w = noise(8000, T, rng.raw());
    const auto feats = extractor.extract(w);
    REQUIRE(static_cast<std::size_t>(feats.num_frames()) ==
            frame_count(T, cfg.hop, cfg.downsample));
    REQUIRE(feats.dim() == cfg.num_mels);
  }

  LogMelConfig ds2 = cfg;
  ds2.downsample = 2;
  const LogMelExtractor extractor2(ds2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t T = 1 + rng.uniform_int(20000);
    const auto feats = extractor2.extract(noise(8000, T, rng.raw()));
    REQUIRE(static_cast<std::size_t>(feats.num_frames()) == frame_count(T, cfg.hop, 2));
  }
}
