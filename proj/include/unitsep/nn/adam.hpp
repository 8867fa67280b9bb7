// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>

#include "unitsep/nn/layers.hpp"

namespace unitsep::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
};

// Adaptive-moment gradient descent with global gradient-norm clipping.
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}

  // Applies one update from the accumulated grads, then clears them.
  void step(ParamStore& store) {
    auto params = store.all();
    double norm_sq = 0.0;
    for (Param* p : params) {
      if (p->grad.size() == 0) p->zero_grad();
      norm_sq += p->grad.squaredNorm();
    }
    double scale = 1.0;
    const double norm = std::sqrt(norm_sq);
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) {
      scale = cfg_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (Param* p : params) {
      if (p->adam_m.size() == 0) {
        p->adam_m.setZero(p->value.rows(), p->value.cols());
        p->adam_v.setZero(p->value.rows(), p->value.cols());
      }
      const Mat g = p->grad * scale;
      p->adam_m = cfg_.beta1 * p->adam_m + (1.0 - cfg_.beta1) * g;
      p->adam_v = cfg_.beta2 * p->adam_v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const Mat mhat = p->adam_m / bc1;
      const Mat vhat = p->adam_v / bc2;
      p->value.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
      p->zero_grad();
    }
    last_grad_norm_ = norm;
  }

  int steps() const { return t_; }
  void set_steps(int t) { t_ = t; }
  double last_grad_norm() const { return last_grad_norm_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace unitsep::nn
