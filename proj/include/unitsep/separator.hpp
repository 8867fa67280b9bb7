// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <json.hpp>
#include <span>
#include <vector>

#include "unitsep/codebook.hpp"
#include "unitsep/features.hpp"
#include "unitsep/nn/layers.hpp"

namespace unitsep {

// Architecture and sizes for the pseudo-ASR model: a frame-synchronous
// classifier that maps a mixture waveform to K streams of per-frame unit
// posteriors plus per-stream speaker posteriors.
struct SeparatorConfig {
  std::string arch = "dualpath";  // "dualpath" | "transformer"
  int num_streams = 2;            // K
  int vocab = 100;                // J, unit alphabet size
  int num_speakers = 0;           // 0 disables the speaker head
  int sample_rate = 8000;
  int unit_hop = 160;             // waveform samples per unit frame (20 ms)
  std::uint64_t init_seed = 1;

  // dualpath: 1-D conv encoder + dual-path recurrent separator
  int dp_channels = 128;
  int dp_kernel = 256;
  int dp_hidden = 64;
  int dp_blocks = 2;
  int dp_segment = 4;
  int dp_latent = 64;

  // transformer: FBank front end + conv subsampler + self-attention blocks
  int tf_mels = 40;
  int tf_window = 256;
  int tf_hop = 80;
  int tf_subsample = 2;
  int tf_blocks = 4;
  int tf_heads = 4;
  int tf_head_dim = 64;
  int tf_ffn = 512;

  int d_model() const { return tf_heads * tf_head_dim; }

  // Paper-sized presets; the small variants are the desk-scale defaults.
  static SeparatorConfig dualpath_desk(int K, int J, int sample_rate) {
    SeparatorConfig c;
    c.arch = "dualpath";
    c.num_streams = K;
    c.vocab = J;
    c.sample_rate = sample_rate;
    c.unit_hop = sample_rate / 50;
    return c;
  }
  static SeparatorConfig dualpath_full(int K, int J, int sample_rate) {
    SeparatorConfig c = dualpath_desk(K, J, sample_rate);
    c.dp_channels = 1024;
    c.dp_kernel = 512;
    c.dp_hidden = 256;
    c.dp_blocks = 6;
    c.dp_latent = 128;
    return c;
  }
  static SeparatorConfig transformer_desk(int K, int J, int sample_rate) {
    SeparatorConfig c;
    c.arch = "transformer";
    c.num_streams = K;
    c.vocab = J;
    c.sample_rate = sample_rate;
    c.unit_hop = sample_rate / 50;
    c.tf_window = sample_rate >= 16000 ? 512 : 256;
    c.tf_hop = c.unit_hop / 2;
    return c;
  }
  static SeparatorConfig transformer_full(int K, int J, int sample_rate) {
    SeparatorConfig c = transformer_desk(K, J, sample_rate);
    c.tf_blocks = 12;
    c.tf_ffn = 2048;
    return c;
  }

  void validate() const {
    if (num_streams < 1) throw ConfigError("separator: K must be >= 1");
    if (vocab < 2) throw ConfigError("separator: J must be >= 2");
    if (arch == "transformer") {
      if (tf_hop * tf_subsample != unit_hop) {
        throw ConfigError("separator: tf_hop * tf_subsample must equal unit_hop");
      }
    } else if (arch != "dualpath") {
      throw ConfigError("separator: unknown arch '" + arch + "'");
    }
  }

  nlohmann::json to_json() const {
    return {{"arch", arch},           {"num_streams", num_streams},
            {"vocab", vocab},         {"num_speakers", num_speakers},
            {"sample_rate", sample_rate}, {"unit_hop", unit_hop},
            {"init_seed", init_seed}, {"dp_channels", dp_channels},
            {"dp_kernel", dp_kernel}, {"dp_hidden", dp_hidden},
            {"dp_blocks", dp_blocks}, {"dp_segment", dp_segment},
            {"dp_latent", dp_latent}, {"tf_mels", tf_mels},
            {"tf_window", tf_window}, {"tf_hop", tf_hop},
            {"tf_subsample", tf_subsample}, {"tf_blocks", tf_blocks},
            {"tf_heads", tf_heads},   {"tf_head_dim", tf_head_dim},
            {"tf_ffn", tf_ffn}};
  }
  static SeparatorConfig from_json(const nlohmann::json& j) {
    SeparatorConfig c;
    c.arch = j.at("arch").get<std::string>();
    c.num_streams = j.at("num_streams").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.num_speakers = j.at("num_speakers").get<int>();
    c.sample_rate = j.at("sample_rate").get<int>();
    c.unit_hop = j.at("unit_hop").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.dp_channels = j.at("dp_channels").get<int>();
    c.dp_kernel = j.at("dp_kernel").get<int>();
    c.dp_hidden = j.at("dp_hidden").get<int>();
    c.dp_blocks = j.at("dp_blocks").get<int>();
    c.dp_segment = j.at("dp_segment").get<int>();
    c.dp_latent = j.at("dp_latent").get<int>();
    c.tf_mels = j.at("tf_mels").get<int>();
    c.tf_window = j.at("tf_window").get<int>();
    c.tf_hop = j.at("tf_hop").get<int>();
    c.tf_subsample = j.at("tf_subsample").get<int>();
    c.tf_blocks = j.at("tf_blocks").get<int>();
    c.tf_heads = j.at("tf_heads").get<int>();
    c.tf_head_dim = j.at("tf_head_dim").get<int>();
    c.tf_ffn = j.at("tf_ffn").get<int>();
    return c;
  }
};

// Per-utterance model outputs, still attached to the graph so the PIT loss
// can backpropagate through them.
struct SeparationOutput {
  std::vector<nn::Var> unit_logits;     // K entries, each (J x N)
  std::vector<nn::Var> speaker_logits;  // K entries, each (num_speakers x 1)
  std::vector<nn::Var> latent;          // K entries, each (H x N)
  int frames = 0;
};

struct DecodedStreams {
  std::vector<UnitSequence> units;  // K sequences
  std::vector<int> speakers;        // argmax speaker ids (-1 if disabled)
};

namespace detail {

struct DualPathBlock {
  nn::BiLstm intra_rnn, inter_rnn;
  nn::Linear intra_proj, inter_proj;
  nn::LayerNorm intra_norm, inter_norm;

  DualPathBlock(nn::ParamStore& store, const std::string& name, int latent, int hidden,
                Rng& rng)
      : intra_rnn(store, name + ".intra", latent, hidden, rng),
        inter_rnn(store, name + ".inter", latent, hidden, rng),
        intra_proj(store, name + ".intra_proj", 2 * hidden, latent, rng),
        inter_proj(store, name + ".inter_proj", 2 * hidden, latent, rng),
        intra_norm(store, name + ".intra_norm", latent),
        inter_norm(store, name + ".inter_norm", latent) {}
};

struct TransformerBlock {
  nn::LayerNorm norm1, norm2;
  nn::MultiHeadAttention attn;
  nn::Linear ffn1, ffn2;

  TransformerBlock(nn::ParamStore& store, const std::string& name, int d_model, int heads,
                   int ffn, Rng& rng)
      : norm1(store, name + ".norm1", d_model),
        norm2(store, name + ".norm2", d_model),
        attn(store, name + ".attn", d_model, heads, rng),
        ffn1(store, name + ".ffn1", d_model, ffn, rng),
        ffn2(store, name + ".ffn2", ffn, d_model, rng) {}
};

// Column index maps for dual-path segmentation over a batch of B utterances
// of N frames each, padded to G segments of length S.
inline std::shared_ptr<std::vector<long>> intra_step_cols(int B, int N, int G, int S,
                                                          int t) {
  auto cols = std::make_shared<std::vector<long>>();
  cols->reserve(static_cast<std::size_t>(B) * G);
  for (int u = 0; u < B; ++u) {
    for (int g = 0; g < G; ++g) {
      const int n = g * S + t;
      cols->push_back(n < N ? static_cast<long>(u) * N + n : -1);
    }
  }
  return cols;
}

inline std::shared_ptr<std::vector<long>> inter_step_cols(int B, int N, int G, int S,
                                                          int g) {
  auto cols = std::make_shared<std::vector<long>>();
  cols->reserve(static_cast<std::size_t>(B) * S);
  for (int u = 0; u < B; ++u) {
    for (int t = 0; t < S; ++t) {
      const int n = g * S + t;
      cols->push_back(n < N ? static_cast<long>(u) * N + n : -1);
    }
  }
  return cols;
}

// Reassembles per-step outputs (concatenated along columns, step-major) back
// into the (B*N)-column frame layout.
inline std::shared_ptr<std::vector<long>> intra_restore_cols(int B, int N, int G, int S) {
  auto cols = std::make_shared<std::vector<long>>();
  cols->reserve(static_cast<std::size_t>(B) * N);
  for (int u = 0; u < B; ++u) {
    for (int n = 0; n < N; ++n) {
      const int g = n / S, t = n % S;
      cols->push_back(static_cast<long>(t) * B * G + static_cast<long>(u) * G + g);
    }
  }
  return cols;
}

inline std::shared_ptr<std::vector<long>> inter_restore_cols(int B, int N, int G, int S) {
  auto cols = std::make_shared<std::vector<long>>();
  cols->reserve(static_cast<std::size_t>(B) * N);
  for (int u = 0; u < B; ++u) {
    for (int n = 0; n < N; ++n) {
      const int g = n / S, t = n % S;
      cols->push_back(static_cast<long>(g) * B * S + static_cast<long>(u) * S + t);
    }
  }
  return cols;
}

}  // namespace detail

// The pseudo-ASR model: Encoder + Separator + Classifier (no signal decoder).
class SeparatorModel {
 public:
  SeparatorModel(const SeparatorConfig& cfg, std::string codebook_id)
      : cfg_(cfg), codebook_id_(std::move(codebook_id)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    if (cfg_.arch == "dualpath") {
      build_dualpath(rng);
    } else {
      build_transformer(rng);
    }
  }

  // Runs a batch of equal-length waveforms through one graph. Outputs are
  // sliced per utterance.
  std::vector<SeparationOutput> forward(nn::Graph& g, std::span<const Waveform> batch) {
    if (batch.empty()) throw ShapeError("separator: empty batch");
    const std::size_t T = batch[0].size();
    for (const auto& w : batch) {
      if (w.size() != T) throw ShapeError("separator: batch lengths differ");
      if (w.sample_rate != cfg_.sample_rate) {
        throw ShapeError("separator: waveform rate does not match model rate");
      }
      if (w.size() == 0) throw ShapeError("separator: empty waveform");
    }
    return cfg_.arch == "dualpath" ? forward_dualpath(g, batch)
                                   : forward_transformer(g, batch);
  }

  SeparationOutput forward_one(nn::Graph& g, const Waveform& w) {
    return forward(g, std::span<const Waveform>(&w, 1))[0];
  }

  const SeparatorConfig& config() const { return cfg_; }
  const std::string& codebook_id() const { return codebook_id_; }
  void set_codebook_id(std::string id) { codebook_id_ = std::move(id); }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

 private:
  void build_dualpath(Rng& rng) {
    encoder_ = nn::Conv1d(store_, "enc", 1, cfg_.dp_channels, cfg_.dp_kernel,
                          cfg_.unit_hop, rng);
    enc_norm_ = nn::LayerNorm(store_, "enc_norm", cfg_.dp_channels);
    bottleneck_ = nn::Linear(store_, "bottleneck", cfg_.dp_channels, cfg_.dp_latent, rng);
    for (int b = 0; b < cfg_.dp_blocks; ++b) {
      dp_blocks_.emplace_back(store_, "dp" + std::to_string(b), cfg_.dp_latent,
                              cfg_.dp_hidden, rng);
    }
    split_ = nn::Linear(store_, "split", cfg_.dp_latent,
                        cfg_.num_streams * cfg_.dp_latent, rng);
    build_heads(rng, cfg_.dp_latent);
  }

  void build_transformer(Rng& rng) {
    const int d = cfg_.d_model();
    sub1_ = nn::Conv1d(store_, "sub1", cfg_.tf_mels, d, 3, cfg_.tf_subsample, rng);
    sub2_ = nn::Conv1d(store_, "sub2", d, d, 3, 1, rng);
    for (int b = 0; b < cfg_.tf_blocks; ++b) {
      tf_blocks_.emplace_back(store_, "tf" + std::to_string(b), d, cfg_.tf_heads,
                              cfg_.tf_ffn, rng);
    }
    final_norm_ = nn::LayerNorm(store_, "final_norm", d);
    split_ = nn::Linear(store_, "split", d, cfg_.num_streams * d, rng);
    build_heads(rng, d);
  }

  void build_heads(Rng& rng, int latent) {
    // Small classifier init keeps the initial unit posterior near uniform.
    classifier_ = nn::Linear(store_, "classifier", latent, cfg_.vocab, rng, 0.05);
    if (cfg_.num_speakers > 0) {
      speaker_head_ = nn::Linear(store_, "speaker", latent, cfg_.num_speakers, rng, 0.05);
    }
  }

  std::vector<SeparationOutput> forward_dualpath(nn::Graph& g,
                                                 std::span<const Waveform> batch) {
    const int B = static_cast<int>(batch.size());
    const int T = static_cast<int>(batch[0].size());
    const int N = static_cast<int>(frame_count(batch[0].size(), cfg_.unit_hop, 1));

    nn::Mat wave(1, static_cast<Eigen::Index>(B) * T);
    for (int u = 0; u < B; ++u) {
      for (int t = 0; t < T; ++t) {
        wave(0, static_cast<Eigen::Index>(u) * T + t) = batch[u].samples[t];
      }
    }
    nn::Var x = g.relu(encoder_(g, g.constant(std::move(wave)), T, B));
    x = enc_norm_(g, x);
    x = bottleneck_(g, x);  // latent x B*N

    const int S = cfg_.dp_segment;
    const int G = (N + S - 1) / S;
    for (auto& block : dp_blocks_) {
      // Intra: sequences run within a segment; segments form the batch.
      std::vector<nn::Var> steps(S);
      for (int t = 0; t < S; ++t) {
        steps[t] = g.select_cols(x, detail::intra_step_cols(B, N, G, S, t));
      }
      auto hs = block.intra_rnn.run(g, steps);
      std::vector<nn::Var> projected(S);
      for (int t = 0; t < S; ++t) projected[t] = block.intra_proj(g, hs[t]);
      nn::Var packed = g.concat_cols(projected);
      nn::Var intra = g.select_cols(packed, detail::intra_restore_cols(B, N, G, S));
      x = g.add(x, block.intra_norm(g, intra));

      // Inter: sequences run across segments; within-segment offsets batch.
      std::vector<nn::Var> gsteps(G);
      for (int gi = 0; gi < G; ++gi) {
        gsteps[gi] = g.select_cols(x, detail::inter_step_cols(B, N, G, S, gi));
      }
      auto gh = block.inter_rnn.run(g, gsteps);
      std::vector<nn::Var> gproj(G);
      for (int gi = 0; gi < G; ++gi) gproj[gi] = block.inter_proj(g, gh[gi]);
      nn::Var gpacked = g.concat_cols(gproj);
      nn::Var inter = g.select_cols(gpacked, detail::inter_restore_cols(B, N, G, S));
      x = g.add(x, block.inter_norm(g, inter));
    }

    return finish(g, x, B, N, cfg_.dp_latent);
  }

  std::vector<SeparationOutput> forward_transformer(nn::Graph& g,
                                                    std::span<const Waveform> batch) {
    const int B = static_cast<int>(batch.size());
    const int d = cfg_.d_model();
    LogMelConfig mel_cfg;
    mel_cfg.sample_rate = cfg_.sample_rate;
    mel_cfg.window_size = cfg_.tf_window;
    mel_cfg.hop = cfg_.tf_hop;
    mel_cfg.num_mels = cfg_.tf_mels;
    const LogMelExtractor fbank(mel_cfg);

    const int Nf = static_cast<int>(frame_count(batch[0].size(), cfg_.tf_hop, 1));
    const int N = static_cast<int>(
        frame_count(batch[0].size(), cfg_.tf_hop, cfg_.tf_subsample));
    nn::Mat feats(cfg_.tf_mels, static_cast<Eigen::Index>(B) * Nf);
    for (int u = 0; u < B; ++u) {
      const FeatureSequence f = fbank.extract(batch[u]);
      feats.middleCols(static_cast<Eigen::Index>(u) * Nf, Nf) = f.frames.transpose();
    }

    nn::Var x = g.relu(sub1_(g, g.constant(std::move(feats)), Nf, B));
    x = g.relu(sub2_(g, x, N, B));

    nn::Mat pe(d, static_cast<Eigen::Index>(B) * N);
    const nn::Mat one = nn::positional_encoding(d, N);
    for (int u = 0; u < B; ++u) pe.middleCols(static_cast<Eigen::Index>(u) * N, N) = one;
    x = g.add(x, g.constant(std::move(pe)));

    for (auto& block : tf_blocks_) {
      // Attention stays within utterances; the rest of the block is batched.
      nn::Var normed = block.norm1(g, x);
      std::vector<nn::Var> attended(B);
      for (int u = 0; u < B; ++u) {
        attended[u] = block.attn(g, g.cols(normed, u * N, N));
      }
      x = g.add(x, g.concat_cols(attended));
      nn::Var ff = block.ffn2(g, g.relu(block.ffn1(g, block.norm2(g, x))));
      x = g.add(x, ff);
    }
    x = final_norm_(g, x);
    return finish(g, x, B, N, d);
  }

  // Shared tail: split into K latents, classify frames, pool for speakers.
  std::vector<SeparationOutput> finish(nn::Graph& g, nn::Var x, int B, int N,
                                       int latent) {
    nn::Var splits = g.relu(split_(g, x));  // K*latent x B*N
    std::vector<SeparationOutput> outs(B);
    for (int u = 0; u < B; ++u) outs[u].frames = N;
    for (int k = 0; k < cfg_.num_streams; ++k) {
      nn::Var latent_k = g.rows(splits, k * latent, latent);
      nn::Var logits_k = classifier_(g, latent_k);
      for (int u = 0; u < B; ++u) {
        nn::Var lat_u = g.cols(latent_k, u * N, N);
        outs[u].latent.push_back(lat_u);
        outs[u].unit_logits.push_back(g.cols(logits_k, u * N, N));
        if (cfg_.num_speakers > 0) {
          outs[u].speaker_logits.push_back(speaker_head_(g, g.mean_cols(lat_u)));
        }
      }
    }
    return outs;
  }

  SeparatorConfig cfg_;
  std::string codebook_id_;
  nn::ParamStore store_;

  nn::Conv1d encoder_, sub1_, sub2_;
  nn::LayerNorm enc_norm_, final_norm_;
  nn::Linear bottleneck_, split_, classifier_, speaker_head_;
  std::vector<detail::DualPathBlock> dp_blocks_;
  std::vector<detail::TransformerBlock> tf_blocks_;
};

// Frame-wise argmax decode; ties go to the lowest unit id. Adding any
// per-frame constant to the logits cannot change the result.
inline DecodedStreams decode_units(const SeparationOutput& out, int frame_hop,
                                   const std::string& codebook_id) {
  DecodedStreams dec;
  for (std::size_t k = 0; k < out.unit_logits.size(); ++k) {
    const nn::Mat& l = out.unit_logits[k].val();
    UnitSequence y;
    y.frame_hop = frame_hop;
    y.codebook_id = codebook_id;
    y.ids.resize(l.cols());
    for (Eigen::Index n = 0; n < l.cols(); ++n) {
      int best = 0;
      double bv = l(0, n);
      for (Eigen::Index j = 1; j < l.rows(); ++j) {
        if (l(j, n) > bv) {
          bv = l(j, n);
          best = static_cast<int>(j);
        }
      }
      y.ids[n] = best;
    }
    int spk = -1;
    if (!out.speaker_logits.empty()) {
      const nn::Mat& s = out.speaker_logits[k].val();
      Eigen::Index arg = 0;
      s.col(0).maxCoeff(&arg);
      spk = static_cast<int>(arg);
      y.speaker_id = spk;
    }
    dec.units.push_back(std::move(y));
    dec.speakers.push_back(spk);
  }
  return dec;
}

}  // namespace unitsep
