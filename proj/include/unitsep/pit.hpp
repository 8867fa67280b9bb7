// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "unitsep/separator.hpp"

namespace unitsep {

// Result of the utterance-level permutation-invariant loss. `permutation[k]`
// is the target stream assigned to output stream k.
struct PitResult {
  double loss = 0.0;  // mean loss over streams under the best permutation
  std::vector<int> permutation;
  std::vector<double> per_stream_loss;
  nn::Var loss_var;  // same value, attached to the graph for backprop
};

// Minimum-cost assignment (Kuhn-Munkres with potentials), O(K^3). Used when
// K is too large for exhaustive enumeration; identical optimum.
inline std::vector<int> hungarian_min_assign(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0);  // column -> row (1-based)
  std::vector<int> way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j) {
    if (match[j] > 0) row_to_col[match[j] - 1] = j - 1;
  }
  return row_to_col;
}

// Exhaustive search threshold: the paper's regime is K=2; up to 4 the K!
// enumeration is cheaper and doubles as its own oracle.
inline constexpr int kPitExhaustiveLimit = 4;

// Utterance-level PIT cross-entropy. Evaluates the mean frame cross-entropy
// for every (output stream, target stream) pair, picks the assignment with
// the lowest total unit loss, and optionally adds a weighted speaker
// cross-entropy under that same assignment.
inline PitResult upit_loss(nn::Graph& g, const SeparationOutput& out,
                           const std::vector<UnitSequence>& targets,
                           const std::vector<int>* speaker_targets = nullptr,
                           double speaker_weight = 0.0) {
  const int K = static_cast<int>(out.unit_logits.size());
  if (static_cast<int>(targets.size()) != K) {
    throw ShapeError("upit_loss: stream count mismatch");
  }
  if (speaker_targets && static_cast<int>(speaker_targets->size()) != K) {
    throw ShapeError("upit_loss: speaker target count mismatch");
  }
  if (speaker_targets && out.speaker_logits.empty()) {
    throw ShapeError("upit_loss: model has no speaker head");
  }

  // Length mismatch tolerance: convolutional edge effects may add or drop a
  // frame or two; anything larger is a wiring error.
  const int n_logits = out.frames;
  int n_target = static_cast<int>(targets[0].size());
  for (const auto& t : targets) {
    if (static_cast<int>(t.size()) != n_target) {
      throw ShapeError("upit_loss: target lengths differ between streams");
    }
  }
  if (std::abs(n_logits - n_target) > 2) {
    throw ShapeError("upit_loss: logits have " + std::to_string(n_logits) +
                     " frames but targets have " + std::to_string(n_target));
  }
  const int N = std::min(n_logits, n_target);
  if (N < 1) throw ShapeError("upit_loss: empty sequences");

  // Pairwise unit losses L(a,b) = CE(output a, target b).
  std::vector<std::vector<nn::Var>> pair_ce(K, std::vector<nn::Var>(K));
  for (int b = 0; b < K; ++b) {
    auto ids = std::make_shared<std::vector<int>>(targets[b].ids.begin(),
                                                  targets[b].ids.begin() + N);
    for (int a = 0; a < K; ++a) {
      nn::Var logits = out.unit_logits[a];
      if (n_logits != N) logits = g.cols(logits, 0, N);
      pair_ce[a][b] = g.cross_entropy_cols(logits, ids);
    }
  }

  // Best assignment by total unit loss.
  std::vector<int> best_perm(K);
  if (K <= kPitExhaustiveLimit) {
    std::vector<int> perm(K);
    for (int k = 0; k < K; ++k) perm[k] = k;
    double best = std::numeric_limits<double>::infinity();
    do {
      double total = 0.0;
      for (int k = 0; k < K; ++k) total += pair_ce[k][perm[k]].val()(0, 0);
      if (total < best) {
        best = total;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    Eigen::MatrixXd cost(K, K);
    for (int a = 0; a < K; ++a) {
      for (int b = 0; b < K; ++b) cost(a, b) = pair_ce[a][b].val()(0, 0);
    }
    best_perm = hungarian_min_assign(cost);
  }

  PitResult result;
  result.permutation = best_perm;
  nn::Var acc = pair_ce[0][best_perm[0]];
  result.per_stream_loss.push_back(acc.val()(0, 0));
  for (int k = 1; k < K; ++k) {
    nn::Var ce = pair_ce[k][best_perm[k]];
    result.per_stream_loss.push_back(ce.val()(0, 0));
    acc = g.add(acc, ce);
  }
  nn::Var loss = g.divc(acc, static_cast<double>(K));

  if (speaker_targets && speaker_weight != 0.0) {
    nn::Var spk_acc;
    for (int k = 0; k < K; ++k) {
      auto sid = std::make_shared<std::vector<int>>(
          std::vector<int>{(*speaker_targets)[best_perm[k]]});
      nn::Var ce = g.cross_entropy_cols(out.speaker_logits[k], sid);
      result.per_stream_loss[k] += speaker_weight * ce.val()(0, 0);
      spk_acc = k == 0 ? ce : g.add(spk_acc, ce);
    }
    loss = g.add(loss, g.smul(g.divc(spk_acc, static_cast<double>(K)), speaker_weight));
  }

  result.loss_var = loss;
  result.loss = loss.val()(0, 0);
  return result;
}

// Frame-unit accuracy of decoded streams against targets under the best
// (accuracy-maximizing) assignment; used for evaluation reporting.
inline double frame_unit_accuracy(const std::vector<UnitSequence>& decoded,
                                  const std::vector<UnitSequence>& targets) {
  const int K = static_cast<int>(decoded.size());
  if (K == 0 || static_cast<int>(targets.size()) != K) {
    throw ShapeError("frame_unit_accuracy: stream count mismatch");
  }
  Eigen::MatrixXd correct(K, K);
  const int N = static_cast<int>(std::min(decoded[0].size(), targets[0].size()));
  for (int a = 0; a < K; ++a) {
    for (int b = 0; b < K; ++b) {
      int hits = 0;
      for (int n = 0; n < N; ++n) {
        if (decoded[a].ids[n] == targets[b].ids[n]) ++hits;
      }
      correct(a, b) = hits;
    }
  }
  std::vector<int> perm(K);
  for (int k = 0; k < K; ++k) perm[k] = k;
  double best = -1.0;
  do {
    double total = 0.0;
    for (int k = 0; k < K; ++k) total += correct(k, perm[k]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(K * N);
}

}  // namespace unitsep
