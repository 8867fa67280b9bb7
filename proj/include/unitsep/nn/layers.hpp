// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "unitsep/nn/tape.hpp"
#include "unitsep/rng.hpp"

namespace unitsep::nn {

// Owns all trainable tensors of a model, in creation order. The order is the
// serialization order, so checkpoints are stable for a fixed architecture.
class ParamStore {
 public:
  Param& create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    params_.push_back(std::make_unique<Param>());
    Param& p = *params_.back();
    p.name = name;
    p.value.setZero(rows, cols);
    return p;
  }

  std::vector<Param*> all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Param*> all() const {
    std::vector<const Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t count() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

inline void init_uniform(Param& p, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = rng.uniform(-bound, bound);
  }
}

// Fan-in scaled uniform init.
inline void init_linear(Param& w, Rng& rng) {
  init_uniform(w, rng, 1.0 / std::sqrt(static_cast<double>(w.value.cols())));
}

struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
         double weight_scale = 1.0) {
    w = &store.create(name + ".w", out, in);
    b = &store.create(name + ".b", out, 1);
    init_linear(*w, rng);
    if (weight_scale != 1.0) w->value *= weight_scale;
  }

  Var operator()(Graph& g, Var x) const {
    return g.add_bias(g.matmul(g.leaf(*w), x), g.leaf(*b));
  }
};

// ------------------------------------------------------------- conv maps

// Column-major flat index for a (rows x cols) matrix.
inline long flat_index(long row, long col, long rows) { return col * rows + row; }

// im2col map for a batch of B equal-length sequences laid out as
// (channels x B*T). Output is (channels*kernel x B*out_len). "same-ceil"
// padding: out_len = ceil(T / stride).
inline std::shared_ptr<std::vector<long>> im2col_map(int channels, int T, int batch,
                                                     int kernel, int stride,
                                                     int dilation = 1) {
  const int out_len = (T + stride - 1) / stride;
  const int span = (out_len - 1) * stride + (kernel - 1) * dilation + 1;
  const int pad_left = (span - T) / 2;
  auto map = std::make_shared<std::vector<long>>();
  map->resize(static_cast<std::size_t>(channels) * kernel * batch * out_len);
  const long rows_out = static_cast<long>(channels) * kernel;
  for (int u = 0; u < batch; ++u) {
    for (int t = 0; t < out_len; ++t) {
      const long out_col = static_cast<long>(u) * out_len + t;
      for (int k = 0; k < kernel; ++k) {
        const int src_t = t * stride - pad_left + k * dilation;
        for (int c = 0; c < channels; ++c) {
          const long out_row = static_cast<long>(c) * kernel + k;
          long v = -1;
          if (src_t >= 0 && src_t < T) {
            v = flat_index(c, static_cast<long>(u) * T + src_t, channels);
          }
          (*map)[static_cast<std::size_t>(out_col * rows_out + out_row)] = v;
        }
      }
    }
  }
  return map;
}

// col2im map for transposed convolution: input (channels*kernel x B*N) is
// scattered into (channels x B*out_len) with out_len = (N-1)*stride + kernel.
inline std::shared_ptr<std::vector<long>> col2im_map(int channels, int N, int batch,
                                                     int kernel, int stride) {
  const int out_len = (N - 1) * stride + kernel;
  auto map = std::make_shared<std::vector<long>>();
  const long rows_in = static_cast<long>(channels) * kernel;
  map->resize(static_cast<std::size_t>(rows_in) * batch * N);
  for (int u = 0; u < batch; ++u) {
    for (int t = 0; t < N; ++t) {
      const long in_col = static_cast<long>(u) * N + t;
      for (int k = 0; k < kernel; ++k) {
        const int dst_t = t * stride + k;
        for (int c = 0; c < channels; ++c) {
          const long in_row = static_cast<long>(c) * kernel + k;
          (*map)[static_cast<std::size_t>(in_col * rows_in + in_row)] =
              flat_index(c, static_cast<long>(u) * out_len + dst_t, channels);
        }
      }
    }
  }
  return map;
}

// 1-D convolution over (in_channels x B*T) inputs with "same-ceil" padding.
struct Conv1d {
  Param* w = nullptr;  // out_channels x in_channels*kernel
  Param* b = nullptr;
  int in_channels = 0, kernel = 1, stride = 1, dilation = 1;

  Conv1d() = default;
  Conv1d(ParamStore& store, const std::string& name, int in_ch, int out_ch, int k,
         int s, Rng& rng, int dil = 1)
      : in_channels(in_ch), kernel(k), stride(s), dilation(dil) {
    w = &store.create(name + ".w", out_ch, static_cast<Eigen::Index>(in_ch) * k);
    b = &store.create(name + ".b", out_ch, 1);
    init_uniform(*w, rng, 1.0 / std::sqrt(static_cast<double>(in_ch) * k));
  }

  int out_len(int T) const { return (T + stride - 1) / stride; }

  Var operator()(Graph& g, Var x, int T, int batch) const {
    const auto map = im2col_map(in_channels, T, batch, kernel, stride, dilation);
    const int N = out_len(T);
    Var cols = g.gather(x, map, in_channels * kernel, batch * N);
    return g.add_bias(g.matmul(g.leaf(*w), cols), g.leaf(*b));
  }
};

// Transposed 1-D convolution (the decoder of the refiner).
struct ConvTranspose1d {
  Param* w = nullptr;  // out_channels*kernel x in_channels
  Param* b = nullptr;
  int out_channels = 0, kernel = 1, stride = 1;

  ConvTranspose1d() = default;
  ConvTranspose1d(ParamStore& store, const std::string& name, int in_ch, int out_ch,
                  int k, int s, Rng& rng)
      : out_channels(out_ch), kernel(k), stride(s) {
    w = &store.create(name + ".w", static_cast<Eigen::Index>(out_ch) * k, in_ch);
    b = &store.create(name + ".b", out_ch, 1);
    init_uniform(*w, rng, 1.0 / std::sqrt(static_cast<double>(in_ch)));
  }

  int out_len(int N) const { return (N - 1) * stride + kernel; }

  Var operator()(Graph& g, Var x, int N, int batch) const {
    Var cols = g.matmul(g.leaf(*w), x);  // out_ch*kernel x B*N
    const auto map = col2im_map(out_channels, N, batch, kernel, stride);
    Var out = g.scatter_add(cols, map, out_channels, batch * out_len(N));
    return g.add_bias(out, g.leaf(*b));
  }
};

// Batched LSTM. Inputs are a sequence of (input_dim x batch) Vars; hidden
// states start at zero. Gate layout along rows: input, forget, cell, output.
struct Lstm {
  Param* wx = nullptr;  // 4H x I
  Param* wh = nullptr;  // 4H x H
  Param* b = nullptr;   // 4H x 1
  int hidden = 0;

  Lstm() = default;
  Lstm(ParamStore& store, const std::string& name, int input, int hidden_dim, Rng& rng)
      : hidden(hidden_dim) {
    wx = &store.create(name + ".wx", 4 * hidden_dim, input);
    wh = &store.create(name + ".wh", 4 * hidden_dim, hidden_dim);
    b = &store.create(name + ".b", 4 * hidden_dim, 1);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    init_uniform(*wx, rng, bound);
    init_uniform(*wh, rng, bound);
    init_uniform(*b, rng, bound);
    // Forget-gate bias offset helps gradient flow early in training.
    b->value.middleRows(hidden_dim, hidden_dim).array() += 1.0;
  }

  std::vector<Var> run(Graph& g, const std::vector<Var>& xs, bool reverse = false) const {
    if (xs.empty()) return {};
    const int B = static_cast<int>(xs[0].val().cols());
    const int H = hidden;
    Var wx_v = g.leaf(*wx), wh_v = g.leaf(*wh), b_v = g.leaf(*b);
    Var h = g.constant(Mat::Zero(H, B));
    Var c = g.constant(Mat::Zero(H, B));
    std::vector<Var> out(xs.size());
    for (std::size_t step = 0; step < xs.size(); ++step) {
      const std::size_t t = reverse ? xs.size() - 1 - step : step;
      Var gates = g.add_bias(g.add(g.matmul(wx_v, xs[t]), g.matmul(wh_v, h)), b_v);
      Var gi = g.sigmoid(g.rows(gates, 0, H));
      Var gf = g.sigmoid(g.rows(gates, H, H));
      Var gc = g.tanh_(g.rows(gates, 2 * H, H));
      Var go = g.sigmoid(g.rows(gates, 3 * H, H));
      c = g.add(g.cmul(gf, c), g.cmul(gi, gc));
      h = g.cmul(go, g.tanh_(c));
      out[t] = h;
    }
    return out;
  }
};

// Bidirectional LSTM; concatenates forward and backward hidden states.
struct BiLstm {
  Lstm fwd, bwd;

  BiLstm() = default;
  BiLstm(ParamStore& store, const std::string& name, int input, int hidden, Rng& rng)
      : fwd(store, name + ".fwd", input, hidden, rng),
        bwd(store, name + ".bwd", input, hidden, rng) {}

  std::vector<Var> run(Graph& g, const std::vector<Var>& xs) const {
    auto f = fwd.run(g, xs, false);
    auto b = bwd.run(g, xs, true);
    std::vector<Var> out(xs.size());
    for (std::size_t t = 0; t < xs.size(); ++t) {
      out[t] = g.concat_rows({f[t], b[t]});
    }
    return out;
  }
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim) {
    gamma = &store.create(name + ".gamma", dim, 1);
    beta = &store.create(name + ".beta", dim, 1);
    gamma->value.setOnes();
  }

  Var operator()(Graph& g, Var x) const {
    return g.layer_norm_cols(x, g.leaf(*gamma), g.leaf(*beta));
  }
};

// Multi-head self-attention over (d_model x N) inputs.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  int head_dim = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, int d_model,
                     int num_heads, Rng& rng)
      : wq(store, name + ".q", d_model, d_model, rng),
        wk(store, name + ".k", d_model, d_model, rng),
        wv(store, name + ".v", d_model, d_model, rng),
        wo(store, name + ".o", d_model, d_model, rng),
        heads(num_heads),
        head_dim(d_model / num_heads) {
    if (d_model % num_heads != 0) {
      throw ConfigError("attention: d_model must be divisible by heads");
    }
  }

  Var operator()(Graph& g, Var x) const {
    Var q = wq(g, x), k = wk(g, x), v = wv(g, x);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> outs(heads);
    for (int h = 0; h < heads; ++h) {
      Var qh = g.rows(q, h * head_dim, head_dim);
      Var kh = g.rows(k, h * head_dim, head_dim);
      Var vh = g.rows(v, h * head_dim, head_dim);
      Var scores = g.smul(g.matmul(g.transpose(kh), qh), scale);  // N x N
      Var attn = g.softmax_cols(scores);
      outs[h] = g.matmul(vh, attn);
    }
    return wo(g, g.concat_rows(outs));
  }
};

// Sinusoidal positions (d_model x N), added to transformer inputs.
inline Mat positional_encoding(int d_model, int n) {
  Mat pe(d_model, n);
  for (int t = 0; t < n; ++t) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle = t / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe(i, t) = std::sin(angle);
      if (i + 1 < d_model) pe(i + 1, t) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace unitsep::nn
