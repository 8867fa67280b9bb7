// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <json.hpp>

#include "unitsep/checkpoint.hpp"
#include "unitsep/nn/adam.hpp"
#include "unitsep/separator.hpp"

namespace unitsep {

struct AlignResult {
  Waveform shifted;
  int lag = 0;  // samples the estimate was advanced by
};

// Cross-correlation alignment of the estimate against the mixture over lags
// in [-max_shift, +max_shift]; compensates the frame shift synthesis
// introduces. Ties (including the all-zero estimate) keep the smallest |lag|.
inline AlignResult align(const Waveform& estimate, const Waveform& mixture,
                         int max_shift) {
  if (estimate.sample_rate != mixture.sample_rate) {
    throw ShapeError("align: sample rates differ");
  }
  const long long Te = static_cast<long long>(estimate.size());
  const long long Tm = static_cast<long long>(mixture.size());

  int best_lag = 0;
  double best_corr = -std::numeric_limits<double>::infinity();
  auto try_lag = [&](int lag) {
    // estimate shifted by +lag: shifted[t] = estimate[t - lag]
    double corr = 0.0;
    const long long lo = std::max<long long>(0, lag);
    const long long hi = std::min(Tm, Te + lag);
    for (long long t = lo; t < hi; ++t) {
      corr += estimate.samples[t - lag] * mixture.samples[t];
    }
    if (corr > best_corr) {
      best_corr = corr;
      best_lag = lag;
    }
  };
  try_lag(0);
  for (int a = 1; a <= max_shift; ++a) {
    try_lag(a);
    try_lag(-a);
  }

  AlignResult result;
  result.lag = best_lag;
  result.shifted.sample_rate = mixture.sample_rate;
  result.shifted.samples.assign(mixture.size(), 0.0);
  for (long long t = 0; t < Tm; ++t) {
    const long long src = t - best_lag;
    if (src >= 0 && src < Te) result.shifted.samples[t] = estimate.samples[src];
  }
  return result;
}

// Scale-invariant SNR in dB, capped to +-60. The projection of the estimate
// onto the reference absorbs any global gain.
inline double si_snr(const Waveform& estimate, const Waveform& reference) {
  if (estimate.size() != reference.size()) throw ShapeError("si_snr: length mismatch");
  if (estimate.empty()) throw ShapeError("si_snr: empty input");
  const std::size_t T = estimate.size();
  double me = 0.0, mr = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    me += estimate.samples[t];
    mr += reference.samples[t];
  }
  me /= static_cast<double>(T);
  mr /= static_cast<double>(T);

  double er = 0.0, rr = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double e = estimate.samples[t] - me;
    const double r = reference.samples[t] - mr;
    er += e * r;
    rr += r * r;
  }
  if (rr == 0.0) throw ShapeError("si_snr: reference is all zero");
  const double alpha = er / rr;
  double s_energy = 0.0, n_energy = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double e = estimate.samples[t] - me;
    const double r = reference.samples[t] - mr;
    const double s = alpha * r;
    const double n = e - s;
    s_energy += s * s;
    n_energy += n * n;
  }
  return ratio_db(s_energy, n_energy);
}

// 2-stage refinement model configuration. The backbone reuses the dual-path
// separator machinery with a 2-channel (mixture + estimate) encoder; a
// dilated-convolution backbone is available as an alternative.
struct RefinerConfig {
  std::string backbone = "dualpath_like";  // "dualpath_like" | "conv_tasnet_like"
  int sample_rate = 8000;
  int enc_channels = 64;
  int enc_kernel = 64;
  int enc_stride = 32;
  int latent = 48;
  int hidden = 40;     // dualpath LSTM units
  int blocks = 2;
  int segment = 16;    // dualpath segment size
  int tcn_kernel = 3;  // conv_tasnet_like
  std::uint64_t init_seed = 1;

  void validate() const {
    if (backbone != "dualpath_like" && backbone != "conv_tasnet_like") {
      throw ConfigError("refiner: unknown backbone '" + backbone + "'");
    }
    if (enc_kernel < enc_stride) {
      throw ConfigError("refiner: enc_kernel must be >= enc_stride");
    }
  }

  nlohmann::json to_json() const {
    return {{"backbone", backbone},     {"sample_rate", sample_rate},
            {"enc_channels", enc_channels}, {"enc_kernel", enc_kernel},
            {"enc_stride", enc_stride}, {"latent", latent},
            {"hidden", hidden},         {"blocks", blocks},
            {"segment", segment},       {"tcn_kernel", tcn_kernel},
            {"init_seed", init_seed}};
  }
  static RefinerConfig from_json(const nlohmann::json& j) {
    RefinerConfig c;
    c.backbone = j.at("backbone").get<std::string>();
    c.sample_rate = j.at("sample_rate").get<int>();
    c.enc_channels = j.at("enc_channels").get<int>();
    c.enc_kernel = j.at("enc_kernel").get<int>();
    c.enc_stride = j.at("enc_stride").get<int>();
    c.latent = j.at("latent").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.segment = j.at("segment").get<int>();
    c.tcn_kernel = j.at("tcn_kernel").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
  }
};

namespace detail {

struct TcnBlock {
  nn::Conv1d dilated;
  nn::Conv1d pointwise;
  nn::LayerNorm norm;

  TcnBlock(nn::ParamStore& store, const std::string& name, int latent, int kernel,
           int dilation, Rng& rng)
      : dilated(store, name + ".dconv", latent, latent, kernel, 1, rng, dilation),
        pointwise(store, name + ".pconv", latent, latent, 1, 1, rng),
        norm(store, name + ".norm", latent) {}
};

}  // namespace detail

// Regression model that pulls a resynthesized estimate toward the ground
// truth, conditioned on the mixture.
class RefinerModel {
 public:
  explicit RefinerModel(const RefinerConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    encoder_ = nn::Conv1d(store_, "enc", 2, cfg_.enc_channels, cfg_.enc_kernel,
                          cfg_.enc_stride, rng);
    enc_norm_ = nn::LayerNorm(store_, "enc_norm", cfg_.enc_channels);
    bottleneck_ = nn::Linear(store_, "bottleneck", cfg_.enc_channels, cfg_.latent, rng);
    if (cfg_.backbone == "dualpath_like") {
      for (int b = 0; b < cfg_.blocks; ++b) {
        dp_blocks_.emplace_back(store_, "dp" + std::to_string(b), cfg_.latent,
                                cfg_.hidden, rng);
      }
    } else {
      for (int b = 0; b < cfg_.blocks; ++b) {
        tcn_blocks_.emplace_back(store_, "tcn" + std::to_string(b), cfg_.latent,
                                 cfg_.tcn_kernel, 1 << b, rng);
      }
    }
    out_proj_ = nn::Linear(store_, "out_proj", cfg_.latent, cfg_.enc_channels, rng);
    decoder_ = nn::ConvTranspose1d(store_, "dec", cfg_.enc_channels, 1, cfg_.enc_kernel,
                                   cfg_.enc_stride, rng);
  }

  // Returns a (1 x T) waveform Var with T == mixture length.
  nn::Var forward(nn::Graph& g, const Waveform& mixture, const Waveform& estimate) {
    if (mixture.size() != estimate.size()) {
      throw ShapeError("refine: mixture and estimate lengths differ");
    }
    if (mixture.sample_rate != cfg_.sample_rate ||
        estimate.sample_rate != cfg_.sample_rate) {
      throw ShapeError("refine: sample rate does not match model");
    }
    const int T = static_cast<int>(mixture.size());
    nn::Mat input(2, T);
    for (int t = 0; t < T; ++t) {
      input(0, t) = mixture.samples[t];
      input(1, t) = estimate.samples[t];
    }
    const int N = (T + cfg_.enc_stride - 1) / cfg_.enc_stride;
    nn::Var x = g.relu(encoder_(g, g.constant(std::move(input)), T, 1));
    x = enc_norm_(g, x);
    x = bottleneck_(g, x);

    if (cfg_.backbone == "dualpath_like") {
      const int S = cfg_.segment;
      const int G = (N + S - 1) / S;
      for (auto& block : dp_blocks_) {
        std::vector<nn::Var> steps(S);
        for (int t = 0; t < S; ++t) {
          steps[t] = g.select_cols(x, detail::intra_step_cols(1, N, G, S, t));
        }
        auto hs = block.intra_rnn.run(g, steps);
        std::vector<nn::Var> proj(S);
        for (int t = 0; t < S; ++t) proj[t] = block.intra_proj(g, hs[t]);
        nn::Var intra = g.select_cols(g.concat_cols(proj),
                                      detail::intra_restore_cols(1, N, G, S));
        x = g.add(x, block.intra_norm(g, intra));

        std::vector<nn::Var> gsteps(G);
        for (int gi = 0; gi < G; ++gi) {
          gsteps[gi] = g.select_cols(x, detail::inter_step_cols(1, N, G, S, gi));
        }
        auto gh = block.inter_rnn.run(g, gsteps);
        std::vector<nn::Var> gproj(G);
        for (int gi = 0; gi < G; ++gi) gproj[gi] = block.inter_proj(g, gh[gi]);
        nn::Var inter = g.select_cols(g.concat_cols(gproj),
                                      detail::inter_restore_cols(1, N, G, S));
        x = g.add(x, block.inter_norm(g, inter));
      }
    } else {
      for (auto& block : tcn_blocks_) {
        nn::Var y = g.relu(block.dilated(g, x, N, 1));
        y = block.pointwise(g, y, N, 1);
        x = g.add(x, block.norm(g, y));
      }
    }

    nn::Var frames = out_proj_(g, x);                  // enc_channels x N
    nn::Var wave = decoder_(g, frames, N, 1);          // 1 x (N-1)*stride+kernel
    const int span = (N - 1) * cfg_.enc_stride + cfg_.enc_kernel;
    const int pad_left = (span - T) / 2;
    return g.cols(wave, pad_left, T);
  }

  Waveform refine(const Waveform& mixture, const Waveform& estimate) {
    nn::Graph g;
    const nn::Var out = forward(g, mixture, estimate);
    Waveform w;
    w.sample_rate = mixture.sample_rate;
    w.samples.assign(out.val().data(), out.val().data() + out.val().cols());
    if (!all_finite(w)) throw ShapeError("refine: non-finite output");
    return w;
  }

  nn::ParamStore& params() { return store_; }
  const RefinerConfig& config() const { return cfg_; }

 private:
  RefinerConfig cfg_;
  nn::ParamStore store_;
  nn::Conv1d encoder_;
  nn::LayerNorm enc_norm_;
  nn::Linear bottleneck_, out_proj_;
  nn::ConvTranspose1d decoder_;
  std::vector<detail::DualPathBlock> dp_blocks_;
  std::vector<detail::TcnBlock> tcn_blocks_;
};

// Negative SI-SNR of a (1 x T) estimate Var against a fixed reference,
// attached to the graph. Used as the refiner training loss.
inline nn::Var neg_si_snr_loss(nn::Graph& g, nn::Var estimate, const Waveform& reference) {
  const Eigen::Index T = estimate.val().cols();
  if (static_cast<std::size_t>(T) != reference.size()) {
    throw ShapeError("neg_si_snr_loss: length mismatch");
  }
  nn::Mat ref_row(1, T);
  for (Eigen::Index t = 0; t < T; ++t) ref_row(0, t) = reference.samples[t];
  ref_row.array() -= ref_row.mean();
  const double ref_energy = ref_row.cwiseProduct(ref_row).sum();
  if (ref_energy <= 0.0) throw ShapeError("neg_si_snr_loss: zero reference");

  nn::Var ref = g.constant(ref_row);
  nn::Var est0 = g.sub_scalar(estimate, g.mean_all(estimate));
  nn::Var alpha = g.divc(g.dot(est0, ref), ref_energy);
  nn::Var target = g.scale_by(ref, alpha);
  nn::Var residual = g.sub(est0, target);
  const nn::Mat eps = nn::Mat::Constant(1, 1, 1e-12);
  nn::Var s_energy = g.add(g.dot(target, target), g.constant(eps));
  nn::Var n_energy = g.add(g.dot(residual, residual), g.constant(eps));
  // -10*log10(s/n) = (10/ln10) * (ln n - ln s)
  const double scale = 10.0 / std::log(10.0);
  return g.smul(g.sub(g.log_(n_energy), g.log_(s_energy)), scale);
}

struct RefinerExample {
  Waveform mixture;
  Waveform estimate;  // aligned stage-1 output
  Waveform truth;
};

struct RefinerTrainOptions {
  int epochs = 10;
  nn::AdamConfig adam;
  std::uint64_t seed = 1;
  std::string checkpoint_path;
  std::string progress_path;
};

struct RefinerTrainStats {
  std::vector<double> epoch_neg_sisnr;  // mean loss per epoch (dB, negated)
};

inline RefinerTrainStats train_refiner(RefinerModel& model,
                                       const std::vector<RefinerExample>& dataset,
                                       const RefinerTrainOptions& opts) {
  if (dataset.empty()) throw FormatError("train_refiner: empty dataset");
  nn::Adam adam(opts.adam);
  Rng rng(opts.seed);
  std::ofstream progress;
  if (!opts.progress_path.empty()) progress.open(opts.progress_path);

  RefinerTrainStats stats;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<int> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    double total = 0.0;
    for (int idx : order) {
      const RefinerExample& ex = dataset[idx];
      nn::Graph g;
      nn::Var out = model.forward(g, ex.mixture, ex.estimate);
      nn::Var loss = neg_si_snr_loss(g, out, ex.truth);
      model.params().zero_grads();
      g.backward(loss);
      adam.step(model.params());
      total += loss.val()(0, 0);
      ++step;
      if (progress.is_open() && step % 20 == 0) {
        progress << "{\"step\":" << step << ",\"epoch\":" << epoch
                 << ",\"neg_sisnr\":" << loss.val()(0, 0) << "}\n";
      }
    }
    stats.epoch_neg_sisnr.push_back(total / static_cast<double>(dataset.size()));
  }

  if (!opts.checkpoint_path.empty()) {
    CheckpointMeta meta;
    meta.kind = "refiner";
    meta.config = model.config().to_json();
    meta.codebook_id = "";
    meta.step = step;
    meta.adam_t = adam.steps();
    meta.rng_state = rng.save_state();
    meta.extra = {{"final_neg_sisnr", stats.epoch_neg_sisnr.back()}};
    save_checkpoint(opts.checkpoint_path, meta, model.params());
  }
  return stats;
}

}  // namespace unitsep
