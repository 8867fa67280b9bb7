// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>
#include <numbers>

#include "unitsep/rng.hpp"
#include "unitsep/vocoder.hpp"

using namespace unitsep;

namespace {

// Vowel-like tone: harmonic series with spectral tilt, vibrato and tremolo,
// over a -35 dB noise floor (deep digital silence between harmonics would
// otherwise dominate log-domain distances).
Waveform vowel(double f0, double tilt_db_per_oct, int sr, std::size_t n,
               double amp = 0.4, std::uint64_t seed = 99) {
  Rng rng(seed);
  Waveform w;
  w.sample_rate = sr;
  w.samples.assign(n, 0.0);
  const double vib_rate = 5.0 + rng.uniform01() * 2.0;
  const double trem_rate = 3.0 + rng.uniform01() * 2.0;
  for (int h = 1; h * f0 * 1.05 < 0.45 * sr; ++h) {
    const double gain = std::pow(10.0, -tilt_db_per_oct * std::log2(h) / 20.0);
    double phase = rng.uniform01() * 2.0 * std::numbers::pi;
    for (std::size_t t = 0; t < n; ++t) {
      const double f_inst =
          h * f0 * (1.0 + 0.03 * std::sin(2.0 * std::numbers::pi * vib_rate * t / sr));
      phase += 2.0 * std::numbers::pi * f_inst / sr;
      w.samples[t] += gain * std::sin(phase);
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    w.samples[t] *= 1.0 - 0.4 * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi *
                                                      trem_rate * t / sr));
  }
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  for (double& s : w.samples) s *= amp / peak;
  const double noise = amp * std::pow(10.0, -35.0 / 20.0);
  for (double& s : w.samples) s += noise * rng.gaussian();
  return w;
}

struct Setup {
  LogMelConfig mel_cfg;
  std::unique_ptr<LogMelExtractor> extractor;
  Codebook cb;
  VocoderConfig vc;
};

Setup make_setup(const std::vector<Waveform>& corpus, int J) {
  Setup s;
  s.mel_cfg = LogMelConfig::for_rate(8000);
  s.extractor = std::make_unique<LogMelExtractor>(s.mel_cfg);
  std::vector<FeatureSequence> feats;
  for (const auto& w : corpus) feats.push_back(s.extractor->extract(w));
  s.cb = train_codebook(feats, J, 50, 11, s.extractor->fingerprint());
  s.vc.codebook_id = s.cb.id();
  s.vc.sample_rate = 8000;
  s.vc.mel_window = s.mel_cfg.window_size;
  s.vc.gl_iterations = 60;
  return s;
}

double mean_frame_l2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::Index n = std::min(a.rows(), b.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += (a.row(i) - b.row(i)).norm();
  }
  return total / static_cast<double>(n);
}

// Energy slope proxy for spectral tilt: low-band minus high-band log energy.
double tilt_proxy(const Waveform& w) {
  const auto spec = stft(w, 512, 160);
  const Eigen::MatrixXd power = spec.frames.cwiseAbs2();
  const double low = power.leftCols(64).sum();
  const double high = power.rightCols(128).sum();
  return std::log(low + 1e-12) - std::log(high + 1e-12);
}

std::vector<Waveform> four_vowels(const std::vector<double>& pitches,
                                  std::size_t len = 16000) {
  std::vector<Waveform> corpus;
  std::uint64_t seed = 7;
  for (double f0 : pitches) corpus.push_back(vowel(f0, 6.0, 8000, len, 0.4, seed++));
  return corpus;
}

}  // namespace

TEST_CASE("synthesize rejects degenerate input", "[vocoder]") {
  const auto corpus = four_vowels({150.0, 220.0, 330.0, 500.0}, 8000);
  Setup s = make_setup(corpus, 6);

  UnitSequence empty;
  empty.frame_hop = 160;
  empty.codebook_id = s.cb.id();
  REQUIRE_THROWS_AS(synthesize(empty, s.cb, s.vc), FormatError);

  UnitSequence y = quantize(s.extractor->extract(corpus[0]), s.cb);
  UnitSequence wrong = y;
  wrong.codebook_id = "hop=80:ds=1:d=40:sr=8000";
  REQUIRE_THROWS_AS(synthesize(wrong, s.cb, s.vc), FormatError);

  // Speaker id against an unconditioned vocoder, and vice versa.
  REQUIRE_THROWS_AS(synthesize(y, s.cb, s.vc, 1), FormatError);
  VocoderConfig cond = s.vc;
  cond.num_speakers = 2;
  REQUIRE_THROWS_AS(synthesize(y, s.cb, cond), FormatError);
  VocoderDecoder dec(cond, s.cb.D());
  REQUIRE_THROWS_AS(synthesize(y, s.cb, cond, 5, &dec), FormatError);
}

TEST_CASE("synthesize length contract and determinism", "[vocoder]") {
  const auto corpus = four_vowels({150.0, 220.0, 330.0, 500.0}, 7000);
  Setup s = make_setup(corpus, 6);
  const UnitSequence y = quantize(s.extractor->extract(corpus[1]), s.cb);

  const Waveform out1 = synthesize(y, s.cb, s.vc);
  const Waveform out2 = synthesize(y, s.cb, s.vc);
  REQUIRE(out1.samples == out2.samples);  // deterministic in lookup_gl mode

  const long long want = static_cast<long long>(y.size()) * y.frame_hop;
  REQUIRE(std::abs(static_cast<long long>(out1.size()) - want) <= y.frame_hop);
  REQUIRE(all_finite(out1));
}

TEST_CASE("oracle round trip stays near the quantization floor", "[vocoder]") {
  const auto corpus = four_vowels({150.0, 220.0, 330.0, 500.0});
  Setup s = make_setup(corpus, 6);

  const FeatureSequence z = s.extractor->extract(corpus[0]);
  const UnitSequence y = quantize(z, s.cb);
  const FeatureSequence quantized = lookup(y, s.cb);

  // Quantization floor measured by the discretizer round trip.
  const double floor = mean_frame_l2(z.frames, quantized.frames);

  const Waveform synth = synthesize(y, s.cb, s.vc);
  Waveform padded = synth;
  padded.samples.resize(corpus[0].size(), 0.0);
  const FeatureSequence back = s.extractor->extract(padded);
  const double roundtrip = mean_frame_l2(z.frames, back.frames);

  REQUIRE(roundtrip <= floor + 0.5);
}

TEST_CASE("unit consistency of resynthesized audio", "[vocoder]") {
  // Re-quantizing features of the lookup_gl output agrees with the input
  // units on at least 80% of frames for clean oracle sequences.
  const auto corpus = four_vowels({150.0, 240.0, 400.0, 640.0}, 12000);
  Setup s = make_setup(corpus, 6);

  for (const Waveform& w : corpus) {
    const UnitSequence y = quantize(s.extractor->extract(w), s.cb);
    Waveform synth = synthesize(y, s.cb, s.vc);
    synth.samples.resize(w.size(), 0.0);
    const UnitSequence re = quantize(s.extractor->extract(synth), s.cb);
    int agree = 0;
    for (std::size_t n = 0; n < y.size(); ++n) {
      if (re.ids[n] == y.ids[n]) ++agree;
    }
    REQUIRE(static_cast<double>(agree) / static_cast<double>(y.size()) >= 0.8);
  }
}

TEST_CASE("external vocoder plug-in boundary", "[vocoder]") {
  const auto corpus = four_vowels({200.0, 300.0, 450.0, 700.0}, 4000);
  Setup s = make_setup(corpus, 4);
  const UnitSequence y = quantize(s.extractor->extract(corpus[0]), s.cb);

  VocoderConfig ext = s.vc;
  ext.mode = VocoderMode::kExternal;
  ext.external_name = "test_plugin";
  REQUIRE_THROWS_AS(synthesize(y, s.cb, ext), ConfigError);  // not registered

  register_vocoder("test_plugin", [](const UnitSequence& units,
                                     const Eigen::MatrixXd& feats,
                                     std::optional<int> /*speaker*/, int sr) {
    Waveform w;
    w.sample_rate = sr;
    w.samples.assign(units.size() * units.frame_hop, 0.25);
    REQUIRE(feats.rows() == static_cast<Eigen::Index>(units.size()));
    return w;
  });
  const Waveform out = synthesize(y, s.cb, ext);
  REQUIRE(out.size() == y.size() * static_cast<std::size_t>(y.frame_hop));
  REQUIRE(out.samples[0] == 0.25);
}

TEST_CASE("decoder training overfits and conditions on speakers", "[vocoder][slow]") {
  // Two synthetic speakers rendering the same pitch content with distinct
  // spectral tilts. The codebook is built directly from per-pitch mean
  // features so units encode content, not speaker.
  const int sr = 8000;
  const std::size_t len = 8000;
  const std::vector<double> pitches = {150.0, 300.0, 600.0, 1200.0};
  const double tilt_a = 4.0, tilt_b = 9.0;

  std::vector<Waveform> renderings;
  std::vector<int> speaker_of;
  std::uint64_t seed = 21;
  for (double f0 : pitches) {
    renderings.push_back(vowel(f0, tilt_a, sr, len, 0.4, seed++));
    speaker_of.push_back(0);
    renderings.push_back(vowel(f0, tilt_b, sr, len, 0.4, seed++));
    speaker_of.push_back(1);
  }
  const LogMelConfig mel_cfg = LogMelConfig::for_rate(sr);
  const LogMelExtractor extractor(mel_cfg);
  Codebook cb;
  cb.fingerprint = extractor.fingerprint();
  cb.centroids.resize(4, mel_cfg.num_mels);
  for (int p = 0; p < 4; ++p) {
    const Eigen::RowVectorXd mean_a =
        extractor.extract(renderings[2 * p]).frames.colwise().mean();
    const Eigen::RowVectorXd mean_b =
        extractor.extract(renderings[2 * p + 1]).frames.colwise().mean();
    cb.centroids.row(p) = 0.5 * (mean_a + mean_b);
  }

  VocoderConfig vc;
  vc.codebook_id = cb.id();
  vc.sample_rate = sr;
  vc.mel_window = mel_cfg.window_size;
  vc.mode = VocoderMode::kTrainedDecoder;
  vc.num_speakers = 2;
  vc.init_seed = 3;

  std::vector<VocoderExample> corpus;
  for (std::size_t i = 0; i < renderings.size(); ++i) {
    VocoderExample ex;
    const FeatureSequence f = extractor.extract(renderings[i]);
    ex.units = quantize(f, cb);
    // Content must survive quantization: nearly every frame maps to its
    // pitch class (tremolo minima may stray).
    int on_class = 0;
    for (int id : ex.units.ids) on_class += (id == static_cast<int>(i / 2));
    REQUIRE(on_class >= static_cast<int>(0.9 * ex.units.size()));
    ex.mel_target = f.frames;
    ex.speaker = speaker_of[i];
    corpus.push_back(std::move(ex));
  }

  VocoderDecoder decoder(vc, cb.D());
  VocoderTrainOptions opts;
  opts.epochs = 60;  // 8 utterances -> 480 steps
  opts.seed = 5;
  opts.adam.lr = 3e-3;
  const VocoderTrainStats stats = train_decoder(decoder, cb, corpus, opts);
  REQUIRE(static_cast<int>(stats.epoch_l1.size()) * 8 <= 500);
  REQUIRE(stats.epoch_l1.back() < 0.1);

  // Loss trend is non-increasing under this fixed seed.
  for (std::size_t e = 1; e < stats.epoch_l1.size(); ++e) {
    REQUIRE(stats.epoch_l1[e] <= stats.epoch_l1[e - 1] * 1.05 + 1e-4);
  }

  // Same units, two speaker ids: tilt moves the expected way and the content
  // units survive re-quantization.
  const UnitSequence y = corpus[0].units;  // speaker 0 rendering of pitch 0
  const Waveform out_a = synthesize(y, cb, vc, 0, &decoder);
  const Waveform out_b = synthesize(y, cb, vc, 1, &decoder);
  REQUIRE(tilt_proxy(out_b) > tilt_proxy(out_a));  // steeper tilt -> more low-band

  int differs = 0;
  for (std::size_t t = 0; t < out_a.size(); ++t) {
    if (out_a.samples[t] != out_b.samples[t]) ++differs;
  }
  REQUIRE(differs > static_cast<int>(out_a.size() / 2));

  for (const Waveform* out : {&out_a, &out_b}) {
    Waveform padded = *out;
    padded.samples.resize(len, 0.0);
    const UnitSequence re = quantize(extractor.extract(padded), cb);
    int agree = 0;
    for (std::size_t n = 0; n < y.size(); ++n) {
      if (re.ids[n] == y.ids[n]) ++agree;
    }
    REQUIRE(static_cast<double>(agree) / static_cast<double>(y.size()) >= 0.9);
  }
}

TEST_CASE("unconditioned decoder trains without speaker ids", "[vocoder]") {
  const auto corpus = four_vowels({220.0, 330.0, 470.0, 650.0}, 6000);
  Setup s = make_setup(corpus, 4);
  s.vc.mode = VocoderMode::kTrainedDecoder;
  s.vc.num_speakers = 0;

  VocoderExample ex;
  const FeatureSequence f = s.extractor->extract(corpus[0]);
  ex.units = quantize(f, s.cb);
  ex.mel_target = f.frames;
  ex.speaker = -1;  // ignored
  VocoderDecoder decoder(s.vc, s.cb.D());
  VocoderTrainOptions opts;
  opts.epochs = 5;
  const VocoderTrainStats stats = train_decoder(decoder, s.cb, {ex}, opts);
  REQUIRE(stats.epoch_l1.back() < stats.epoch_l1.front() + 1e-9);
  REQUIRE(all_finite(synthesize(ex.units, s.cb, s.vc, std::nullopt, &decoder)));
}

TEST_CASE("upsample_features interpolates linearly", "[vocoder]") {
  Eigen::MatrixXd feats(3, 2);
  feats << 0.0, 10.0, 4.0, 2.0, 8.0, -6.0;
  const Eigen::MatrixXd up = upsample_features(feats, 2);
  REQUIRE(up.rows() == 6);
  REQUIRE(up(0, 0) == 0.0);
  REQUIRE(up(1, 0) == Catch::Approx(2.0));   // midpoint of 0 and 4
  REQUIRE(up(3, 1) == Catch::Approx(-2.0));  // midpoint of 2 and -6
  REQUIRE(up(5, 0) == 8.0);                  // clamped tail
  REQUIRE(upsample_features(feats, 1) == feats);
}
