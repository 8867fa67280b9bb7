// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>

#include "unitsep/checkpoint.hpp"
#include "unitsep/codebook.hpp"
#include "unitsep/griffin_lim.hpp"
#include "unitsep/nnls.hpp"
#include "unitsep/nn/adam.hpp"

namespace unitsep {

enum class VocoderMode { kLookupGl, kTrainedDecoder, kExternal };

inline std::string to_string(VocoderMode m) {
  switch (m) {
    case VocoderMode::kLookupGl: return "lookup_gl";
    case VocoderMode::kTrainedDecoder: return "trained_decoder";
    case VocoderMode::kExternal: return "external";
  }
  return "?";
}

inline VocoderMode vocoder_mode_from_string(const std::string& s) {
  if (s == "lookup_gl") return VocoderMode::kLookupGl;
  if (s == "trained_decoder") return VocoderMode::kTrainedDecoder;
  if (s == "external") return VocoderMode::kExternal;
  throw ConfigError("unknown vocoder mode '" + s + "'");
}

// Unit-sequence to waveform synthesis settings. The centroid features are
// log-mel energies; synthesis inverts them to a linear magnitude and
// reconstructs phase, optionally after a learned per-speaker mel regressor.
struct VocoderConfig {
  std::string codebook_id;
  int sample_rate = 8000;
  int downsample_factor = 1;  // mel frames per unit frame
  int num_speakers = 0;       // 0 = unconditioned
  VocoderMode mode = VocoderMode::kLookupGl;
  int gl_iterations = 60;
  int mel_window = 256;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 -> nyquist
  int embed_dim = 32;
  int decoder_hidden = 64;
  int decoder_kernel = 5;
  std::uint64_t init_seed = 1;
  std::string external_name;

  double fmax_or_nyquist() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }

  void validate(int frame_hop) const {
    if (downsample_factor < 1) throw ConfigError("vocoder: downsample_factor must be >= 1");
    if (frame_hop % downsample_factor != 0) {
      throw ConfigError("vocoder: downsample_factor must divide the unit frame hop");
    }
    if (gl_iterations < 1) throw ConfigError("vocoder: gl_iterations must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"codebook_id", codebook_id},
            {"sample_rate", sample_rate},
            {"downsample_factor", downsample_factor},
            {"num_speakers", num_speakers},
            {"mode", to_string(mode)},
            {"gl_iterations", gl_iterations},
            {"mel_window", mel_window},
            {"fmin", fmin},
            {"fmax", fmax},
            {"embed_dim", embed_dim},
            {"decoder_hidden", decoder_hidden},
            {"decoder_kernel", decoder_kernel},
            {"init_seed", init_seed},
            {"external_name", external_name}};
  }
  static VocoderConfig from_json(const nlohmann::json& j) {
    VocoderConfig c;
    c.codebook_id = j.at("codebook_id").get<std::string>();
    c.sample_rate = j.at("sample_rate").get<int>();
    c.downsample_factor = j.at("downsample_factor").get<int>();
    c.num_speakers = j.at("num_speakers").get<int>();
    c.mode = vocoder_mode_from_string(j.at("mode").get<std::string>());
    c.gl_iterations = j.at("gl_iterations").get<int>();
    c.mel_window = j.at("mel_window").get<int>();
    c.fmin = j.at("fmin").get<double>();
    c.fmax = j.at("fmax").get<double>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.decoder_kernel = j.at("decoder_kernel").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.external_name = j.value("external_name", "");
    return c;
  }
};

// Plug-in boundary for neural vocoders: arrays in, samples out.
using ExternalVocoder = std::function<Waveform(
    const UnitSequence& units, const Eigen::MatrixXd& centroid_features,
    std::optional<int> speaker, int sample_rate)>;

namespace detail {

inline std::map<std::string, ExternalVocoder>& vocoder_registry() {
  static std::map<std::string, ExternalVocoder> registry;
  return registry;
}
inline std::mutex& vocoder_registry_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

inline void register_vocoder(const std::string& name, ExternalVocoder fn) {
  std::lock_guard<std::mutex> lock(detail::vocoder_registry_mutex());
  detail::vocoder_registry()[name] = std::move(fn);
}

// Linear interpolation of unit-rate features up to the mel frame rate.
inline Eigen::MatrixXd upsample_features(const Eigen::MatrixXd& feats, int factor) {
  if (factor == 1) return feats;
  const Eigen::Index N = feats.rows();
  Eigen::MatrixXd out(N * factor, feats.cols());
  for (Eigen::Index m = 0; m < out.rows(); ++m) {
    const double pos = static_cast<double>(m) / factor;
    const Eigen::Index lo = static_cast<Eigen::Index>(pos);
    const Eigen::Index hi = std::min(lo + 1, N - 1);
    const double frac = pos - static_cast<double>(lo);
    out.row(m) = (1.0 - frac) * feats.row(lo) + frac * feats.row(hi);
  }
  return out;
}

// Energy spreading of a bin-centered sinusoid under a periodic Hann
// analysis window: [1/6, 2/3, 1/6] across adjacent bins.
inline Eigen::MatrixXd hann_spread_matrix(int num_bins) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(num_bins, num_bins);
  for (int b = 0; b < num_bins; ++b) {
    s(b, b) += 2.0 / 3.0;
    if (b > 0) s(b - 1, b) += 1.0 / 6.0;
    if (b + 1 < num_bins) s(b + 1, b) += 1.0 / 6.0;
  }
  return s;
}

// Log-mel frames back to a linear magnitude spectrogram: undo the log floor,
// invert the filterbank by per-frame nonnegative least squares, take square
// roots. Two refinements keep the round trip faithful in the log domain:
// the window's energy spreading is folded into the solve (so re-analysis of
// the synthesized lines reproduces the mel values), and each band equation
// is weighted by its inverse level (so quiet bands are fit in relative
// terms rather than drowned out by loud ones).
inline Eigen::MatrixXd mel_to_magnitude(const Eigen::MatrixXd& log_mel_frames,
                                        const Eigen::MatrixXd& fb) {
  Eigen::MatrixXd mel_power =
      (log_mel_frames.array().exp() - kLogMelFloor).cwiseMax(0.0);
  const Eigen::MatrixXd spread = hann_spread_matrix(static_cast<int>(fb.cols()));
  const Eigen::MatrixXd response = fb * spread;
  Eigen::MatrixXd power(mel_power.rows(), fb.cols());
  Eigen::MatrixXd weighted_response(response.rows(), response.cols());
  Eigen::VectorXd weighted_target(response.rows());
  for (Eigen::Index f = 0; f < mel_power.rows(); ++f) {
    const double floor = std::max(mel_power.row(f).maxCoeff() * 1e-8, 1e-300);
    for (Eigen::Index m = 0; m < response.rows(); ++m) {
      const double w = 1.0 / std::max(mel_power(f, m), floor);
      weighted_response.row(m) = w * response.row(m);
      weighted_target(m) = w * mel_power(f, m);
    }
    const Eigen::VectorXd lines = nnls(weighted_response, weighted_target);
    power.row(f) = (spread * lines).transpose();
  }
  return power.cwiseSqrt();
}

// Small convolutional regressor from centroid (+ speaker) embeddings to mel
// frames; the trainable half of the vocoder.
class VocoderDecoder {
 public:
  VocoderDecoder(const VocoderConfig& cfg, int feature_dim)
      : cfg_(cfg), feature_dim_(feature_dim) {
    Rng rng(cfg.init_seed);
    const int in_dim = feature_dim + (cfg.num_speakers > 0 ? cfg.embed_dim : 0);
    conv1_ = nn::Conv1d(store_, "dec1", in_dim, cfg.decoder_hidden, cfg.decoder_kernel,
                        1, rng);
    conv2_ = nn::Conv1d(store_, "dec2", cfg.decoder_hidden, cfg.decoder_hidden,
                        cfg.decoder_kernel, 1, rng);
    conv3_ = nn::Conv1d(store_, "dec3", cfg.decoder_hidden, feature_dim,
                        cfg.decoder_kernel, 1, rng);
    if (cfg.num_speakers > 0) {
      embedding_ = &store_.create("speaker_embedding", cfg.embed_dim, cfg.num_speakers);
      init_uniform(*embedding_, rng, 0.5);
    }
  }

  // feats: (M x D) mel-rate centroid features. Returns (M x D) predicted mel.
  nn::Var predict(nn::Graph& g, const Eigen::MatrixXd& feats,
                  std::optional<int> speaker) {
    const int M = static_cast<int>(feats.rows());
    nn::Var x = g.constant(feats.transpose());  // D x M
    if (cfg_.num_speakers > 0) {
      if (!speaker || *speaker < 0 || *speaker >= cfg_.num_speakers) {
        throw FormatError("vocoder: unknown speaker id");
      }
      nn::Var emb = g.cols(g.leaf(*embedding_), *speaker, 1);  // E x 1
      nn::Var tiled = g.matmul(emb, g.constant(nn::Mat::Ones(1, M)));
      x = g.concat_rows({x, tiled});
    }
    nn::Var h = g.relu(conv1_(g, x, M, 1));
    h = g.relu(conv2_(g, h, M, 1));
    nn::Var out = conv3_(g, h, M, 1);  // D x M
    // Residual from the centroid features keeps the identity easy to learn.
    return g.add(out, g.constant(feats.transpose()));
  }

  Eigen::MatrixXd predict_mel(const Eigen::MatrixXd& feats, std::optional<int> speaker) {
    nn::Graph g;
    return predict(g, feats, speaker).val().transpose();
  }

  nn::ParamStore& params() { return store_; }
  const VocoderConfig& config() const { return cfg_; }
  int feature_dim() const { return feature_dim_; }

 private:
  VocoderConfig cfg_;
  int feature_dim_ = 0;
  nn::ParamStore store_;
  nn::Conv1d conv1_, conv2_, conv3_;
  nn::Param* embedding_ = nullptr;
};

// Re-synthesizes a waveform from a unit sequence. Length contract:
// exactly N * frame_hop samples (within one hop of N * frame_hop).
inline Waveform synthesize(const UnitSequence& y, const Codebook& cb,
                           const VocoderConfig& vc,
                           std::optional<int> speaker = std::nullopt,
                           VocoderDecoder* decoder = nullptr) {
  if (y.ids.empty()) throw FormatError("synthesize: empty unit sequence");
  if (y.codebook_id != cb.id() || (!vc.codebook_id.empty() && vc.codebook_id != cb.id())) {
    throw FormatError("synthesize: fingerprint mismatch between units, codebook and vocoder");
  }
  vc.validate(y.frame_hop);
  if (vc.num_speakers > 0) {
    if (!speaker) throw FormatError("synthesize: speaker id required by this vocoder");
    if (*speaker < 0 || *speaker >= vc.num_speakers) {
      throw FormatError("synthesize: unknown speaker id " + std::to_string(*speaker));
    }
  } else if (speaker && vc.mode != VocoderMode::kExternal) {
    throw FormatError("synthesize: speaker id given but vocoder is unconditioned");
  }

  const FeatureSequence centroid = lookup(y, cb);

  if (vc.mode == VocoderMode::kExternal) {
    std::lock_guard<std::mutex> lock(detail::vocoder_registry_mutex());
    auto it = detail::vocoder_registry().find(vc.external_name);
    if (it == detail::vocoder_registry().end()) {
      throw ConfigError("synthesize: external vocoder '" + vc.external_name +
                        "' is not registered");
    }
    return it->second(y, centroid.frames, speaker, vc.sample_rate);
  }

  Eigen::MatrixXd mel = upsample_features(centroid.frames, vc.downsample_factor);
  if (vc.mode == VocoderMode::kTrainedDecoder) {
    if (decoder == nullptr) {
      throw ConfigError("synthesize: trained_decoder mode needs a decoder");
    }
    mel = decoder->predict_mel(mel, speaker);
  }

  const int mel_hop = y.frame_hop / vc.downsample_factor;
  const Eigen::MatrixXd fb = mel_filterbank(static_cast<int>(mel.cols()), vc.mel_window,
                                            vc.sample_rate, vc.fmin,
                                            vc.fmax_or_nyquist());
  Eigen::MatrixXd mag = mel_to_magnitude(mel, fb);
  const std::size_t out_len = y.size() * static_cast<std::size_t>(y.frame_hop);
  // Repeat the final frame up to the frame count of the output length;
  // zero-padding there would fight the overlap-add at the tail.
  const Eigen::Index frames_needed = static_cast<Eigen::Index>(out_len / mel_hop) + 1;
  if (frames_needed > mag.rows()) {
    const Eigen::Index have = mag.rows();
    mag.conservativeResize(frames_needed, Eigen::NoChange);
    for (Eigen::Index f = have; f < frames_needed; ++f) mag.row(f) = mag.row(have - 1);
  }
  return griffin_lim(mag, vc.gl_iterations, vc.mel_window, mel_hop, vc.sample_rate,
                     out_len)
      .waveform;
}

// Training corpus entry for the decoder: units in, mel frames out.
struct VocoderExample {
  UnitSequence units;
  Eigen::MatrixXd mel_target;  // (N * downsample_factor) x D
  int speaker = -1;
};

struct VocoderTrainOptions {
  int epochs = 30;
  int batch_size = 1;  // decoder graphs are per-utterance
  nn::AdamConfig adam;
  std::uint64_t seed = 1;
  std::string checkpoint_path;
};

struct VocoderTrainStats {
  std::vector<double> epoch_l1;
};

// Minimizes mean L1 between predicted and target mel frames. Works for
// corpora disjoint from the separator's (the style-transfer setting).
inline VocoderTrainStats train_decoder(VocoderDecoder& decoder, const Codebook& cb,
                                       const std::vector<VocoderExample>& corpus,
                                       const VocoderTrainOptions& opts) {
  if (corpus.empty()) throw FormatError("train_decoder: empty corpus");
  const VocoderConfig& vc = decoder.config();
  for (const auto& ex : corpus) {
    if (ex.units.codebook_id != cb.id()) {
      throw FormatError("train_decoder: unit fingerprint does not match codebook");
    }
    if (vc.num_speakers > 0 && (ex.speaker < 0 || ex.speaker >= vc.num_speakers)) {
      throw FormatError("train_decoder: bad speaker id in corpus");
    }
  }

  nn::Adam adam(opts.adam);
  Rng rng(opts.seed);
  VocoderTrainStats stats;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<int> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    double total = 0.0;
    for (int idx : order) {
      const VocoderExample& ex = corpus[idx];
      const Eigen::MatrixXd up =
          upsample_features(lookup(ex.units, cb).frames, vc.downsample_factor);
      nn::Graph g;
      nn::Var pred = decoder.predict(
          g, up, vc.num_speakers > 0 ? std::optional<int>(ex.speaker) : std::nullopt);
      nn::Var diff = g.sub(pred, g.constant(ex.mel_target.transpose()));
      nn::Var loss = g.mean_all(g.abs_(diff));
      decoder.params().zero_grads();
      g.backward(loss);
      adam.step(decoder.params());
      total += loss.val()(0, 0);
    }
    stats.epoch_l1.push_back(total / static_cast<double>(corpus.size()));
  }

  if (!opts.checkpoint_path.empty()) {
    CheckpointMeta meta;
    meta.kind = "vocoder";
    meta.config = vc.to_json();
    meta.codebook_id = cb.id();
    meta.step = static_cast<std::int64_t>(opts.epochs) *
                static_cast<std::int64_t>(corpus.size());
    meta.adam_t = adam.steps();
    meta.rng_state = rng.save_state();
    meta.extra = {{"feature_dim", decoder.feature_dim()},
                  {"final_l1", stats.epoch_l1.back()}};
    save_checkpoint(opts.checkpoint_path, meta, decoder.params());
  }
  return stats;
}

}  // namespace unitsep
