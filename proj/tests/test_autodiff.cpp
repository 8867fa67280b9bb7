// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>
#include <functional>

#include "unitsep/nn/adam.hpp"
#include "unitsep/nn/layers.hpp"
#include "unitsep/nn/tape.hpp"
#include "unitsep/rng.hpp"

using namespace unitsep;
using namespace unitsep::nn;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
  return m;
}

// Central finite differences on every coordinate of every parameter.
// `loss` must rebuild the graph from the param values each call.
void check_gradients(std::vector<Param*> params, const std::function<double()>& loss,
                     double step = 1e-6, double tol = 1e-6) {
  // Analytic gradients are expected to be accumulated in p->grad already.
  for (Param* p : params) {
    REQUIRE(p->grad.size() == p->value.size());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + step;
      const double up = loss();
      p->value.data()[i] = keep - step;
      const double down = loss();
      p->value.data()[i] = keep;
      const double fd = (up - down) / (2.0 * step);
      const double ad = p->grad.data()[i];
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-4});
      INFO(p->name << "[" << i << "] ad=" << ad << " fd=" << fd);
      REQUIRE(std::abs(ad - fd) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("elementwise and matmul gradients", "[autodiff]") {
  Rng rng(1);
  ParamStore store;
  Param& a = store.create("a", 4, 3);
  Param& b = store.create("b", 3, 5);
  Param& bias = store.create("bias", 4, 1);
  a.value = random_mat(rng, 4, 3);
  b.value = random_mat(rng, 3, 5);
  bias.value = random_mat(rng, 4, 1);

  auto loss_value = [&]() {
    Graph g;
    Var x = g.matmul(g.leaf(a), g.leaf(b));
    x = g.add_bias(x, g.leaf(bias));
    x = g.tanh_(x);
    x = g.cmul(x, g.sigmoid(x));
    x = g.add(x, g.relu(g.smul(x, -1.5)));
    x = g.abs_(x);
    return g.mean_all(x).val()(0, 0);
  };
  {
    Graph g;
    Var x = g.matmul(g.leaf(a), g.leaf(b));
    x = g.add_bias(x, g.leaf(bias));
    x = g.tanh_(x);
    x = g.cmul(x, g.sigmoid(x));
    x = g.add(x, g.relu(g.smul(x, -1.5)));
    x = g.abs_(x);
    store.zero_grads();
    g.backward(g.mean_all(x));
  }
  check_gradients(store.all(), loss_value);
}

TEST_CASE("reduction, scalar and slicing gradients", "[autodiff]") {
  Rng rng(2);
  ParamStore store;
  Param& a = store.create("a", 6, 4);
  Param& b = store.create("b", 6, 4);
  a.value = random_mat(rng, 6, 4);
  b.value = random_mat(rng, 6, 4).array() + 3.0;  // keep log input positive

  auto build = [&](Graph& g) {
    Var x = g.leaf(a);
    Var y = g.leaf(b);
    Var joined = g.concat_rows({g.rows(x, 0, 3), g.rows(x, 3, 3)});        // 6 x 4
    Var wide = g.concat_cols({g.transpose(joined), g.transpose(g.cols(y, 0, 4))});
    Var d = g.add(g.dot(x, y), g.smul(g.sum_all(g.cmul(wide, wide)), 0.05));
    Var m = g.mean_all(g.log_(y));
    Var s = g.sub_scalar(x, g.mean_all(x));
    Var t = g.sum_all(g.cmul(s, s));
    Var ratio = g.sdiv(d, g.sum_all(y));
    Var mixed = g.add(g.scale_by(g.mean_cols(x), ratio), g.smul(g.mean_cols(y), 0.3));
    return g.add(g.add(g.sum_all(mixed), g.smul(m, 2.0)), g.smul(t, 0.1));
  };
  {
    Graph g;
    store.zero_grads();
    g.backward(build(g));
  }
  auto loss_value = [&]() {
    Graph g;
    return build(g).val()(0, 0);
  };
  check_gradients(store.all(), loss_value);
}

TEST_CASE("gather and scatter_add gradients", "[autodiff]") {
  Rng rng(3);
  ParamStore store;
  Param& a = store.create("a", 3, 8);
  a.value = random_mat(rng, 3, 8);

  const auto fwd_map = im2col_map(3, 8, 1, 4, 2);
  const auto back_map = col2im_map(2, 4, 1, 3, 2);  // 6 x 4 -> 2 x 9

  auto build = [&](Graph& g) {
    Var x = g.leaf(a);
    Var cols = g.gather(x, fwd_map, 12, 4);
    Var folded = g.rows(cols, 0, 6);  // 6 x 4
    Var scat = g.scatter_add(folded, back_map, 2, 9);
    return g.mean_all(g.cmul(scat, scat));
  };
  {
    Graph g;
    store.zero_grads();
    g.backward(build(g));
  }
  check_gradients(store.all(), [&]() {
    Graph g;
    return build(g).val()(0, 0);
  });
}

TEST_CASE("softmax, cross-entropy and layer-norm gradients", "[autodiff]") {
  Rng rng(4);
  ParamStore store;
  Param& logits = store.create("logits", 5, 7);
  Param& gamma = store.create("gamma", 5, 1);
  Param& beta = store.create("beta", 5, 1);
  logits.value = random_mat(rng, 5, 7);
  gamma.value = random_mat(rng, 5, 1).array() + 1.5;
  beta.value = random_mat(rng, 5, 1);

  auto targets = std::make_shared<std::vector<int>>(std::vector<int>{0, 3, 2, 4, 1, 1, 0});

  auto build = [&](Graph& g) {
    Var x = g.layer_norm_cols(g.leaf(logits), g.leaf(gamma), g.leaf(beta));
    Var sm = g.softmax_cols(x);
    Var ce = g.cross_entropy_cols(x, targets);
    return g.add(ce, g.smul(g.mean_all(g.cmul(sm, sm)), 0.7));
  };
  {
    Graph g;
    store.zero_grads();
    g.backward(build(g));
  }
  check_gradients(store.all(), [&]() {
    Graph g;
    return build(g).val()(0, 0);
  });
}

TEST_CASE("lstm and bilstm gradients", "[autodiff]") {
  Rng rng(5);
  ParamStore store;
  Lstm lstm(store, "lstm", 3, 4, rng);
  BiLstm bi(store, "bi", 4, 3, rng);
  Param& input = store.create("x", 3, 10);  // 5 steps x batch 2
  input.value = random_mat(rng, 3, 10);

  auto build = [&](Graph& g) {
    std::vector<Var> xs;
    for (int t = 0; t < 5; ++t) xs.push_back(g.cols(g.leaf(input), t * 2, 2));
    auto hs = lstm.run(g, xs);
    auto bs = bi.run(g, hs);
    Var acc = g.sum_all(bs[0]);
    for (std::size_t t = 1; t < bs.size(); ++t) acc = g.add(acc, g.sum_all(g.cmul(bs[t], bs[t])));
    return acc;
  };
  {
    Graph g;
    store.zero_grads();
    g.backward(build(g));
  }
  check_gradients(store.all(), [&]() {
    Graph g;
    return build(g).val()(0, 0);
  }, 1e-6, 2e-6);
}

TEST_CASE("conv1d and conv_transpose1d gradients", "[autodiff]") {
  Rng rng(6);
  ParamStore store;
  Conv1d conv(store, "conv", 2, 3, 4, 2, rng);
  ConvTranspose1d deconv(store, "deconv", 3, 1, 4, 2, rng);
  Param& input = store.create("x", 2, 12);
  input.value = random_mat(rng, 2, 12);

  auto build = [&](Graph& g) {
    Var x = g.leaf(input);
    Var framed = conv(g, x, 12, 1);          // 3 x 6
    Var act = g.relu(framed);
    Var wave = deconv(g, act, 6, 1);         // 1 x 14
    return g.mean_all(g.cmul(wave, wave));
  };
  {
    Graph g;
    store.zero_grads();
    g.backward(build(g));
  }
  check_gradients(store.all(), [&]() {
    Graph g;
    return build(g).val()(0, 0);
  });
}

TEST_CASE("multi-head attention gradients", "[autodiff]") {
  Rng rng(7);
  ParamStore store;
  MultiHeadAttention mha(store, "mha", 6, 2, rng);
  Param& input = store.create("x", 6, 5);
  input.value = random_mat(rng, 6, 5, 0.5);

  auto build = [&](Graph& g) {
    Var y = mha(g, g.leaf(input));
    return g.mean_all(g.cmul(y, y));
  };
  {
    Graph g;
    store.zero_grads();
    g.backward(build(g));
  }
  check_gradients(store.all(), [&]() {
    Graph g;
    return build(g).val()(0, 0);
  }, 1e-6, 5e-6);
}

TEST_CASE("adam takes descent steps and clips", "[adam]") {
  Rng rng(8);
  ParamStore store;
  Param& p = store.create("p", 4, 4);
  p.value = random_mat(rng, 4, 4);
  const Mat target = random_mat(rng, 4, 4);

  AdamConfig cfg;
  cfg.lr = 5e-2;
  Adam adam(cfg);
  double first_loss = 0.0, last_loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    Graph g;
    Var diff = g.sub(g.leaf(p), g.constant(target));
    Var loss = g.mean_all(g.cmul(diff, diff));
    if (step == 0) first_loss = loss.val()(0, 0);
    last_loss = loss.val()(0, 0);
    store.zero_grads();
    g.backward(loss);
    adam.step(store);
  }
  REQUIRE(last_loss < 0.01 * first_loss);
  REQUIRE(adam.steps() == 200);
}

TEST_CASE("graph rejects foreign vars and shape mismatches", "[autodiff]") {
  Graph g1, g2;
  Var a = g1.constant(Mat::Zero(2, 2));
  Var b = g2.constant(Mat::Zero(2, 2));
  REQUIRE_THROWS_AS(g1.add(a, b), ShapeError);
  Var c = g1.constant(Mat::Zero(3, 2));
  REQUIRE_THROWS_AS(g1.add(a, c), ShapeError);
  REQUIRE_THROWS_AS(g1.backward(a), ShapeError);  // non-scalar root
}
