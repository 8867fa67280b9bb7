// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "unitsep/common.hpp"

namespace unitsep {

// Lawson-Hanson active-set solver for min ||A x - b|| s.t. x >= 0.
// Deterministic: ties in the selection step go to the lowest index.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                            int max_outer = 0, double tol = 0.0) {
  const Eigen::Index n = A.cols();
  if (A.rows() != b.size()) throw ShapeError("nnls: dimension mismatch");
  if (max_outer <= 0) max_outer = static_cast<int>(3 * n);
  if (tol <= 0.0) {
    tol = 1e-12 * A.cwiseAbs().maxCoeff() * std::max<double>(1.0, b.cwiseAbs().maxCoeff());
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<char> passive(n, 0);
  std::vector<Eigen::Index> passive_list;

  Eigen::VectorXd w = A.transpose() * b;  // gradient at x = 0

  auto solve_passive = [&](Eigen::VectorXd& z) {
    Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(passive_list.size()));
    for (std::size_t i = 0; i < passive_list.size(); ++i) {
      Ap.col(static_cast<Eigen::Index>(i)) = A.col(passive_list[i]);
    }
    const Eigen::VectorXd sol = Ap.colPivHouseholderQr().solve(b);
    z.setZero(n);
    for (std::size_t i = 0; i < passive_list.size(); ++i) {
      z(passive_list[i]) = sol(static_cast<Eigen::Index>(i));
    }
  };

  for (int outer = 0; outer < max_outer; ++outer) {
    // Most-violating coordinate among active constraints.
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!passive[i] && w(i) > best_w) {
        best_w = w(i);
        best = i;
      }
    }
    if (best < 0) break;
    passive[best] = 1;
    passive_list.push_back(best);

    Eigen::VectorXd z;
    solve_passive(z);
    int guard = 0;
    while (guard++ < static_cast<int>(2 * n)) {
      bool feasible = true;
      for (Eigen::Index i : passive_list) {
        if (z(i) <= 0.0) {
          feasible = false;
          break;
        }
      }
      if (feasible) break;
      double alpha = std::numeric_limits<double>::infinity();
      for (Eigen::Index i : passive_list) {
        if (z(i) <= 0.0) {
          const double a = x(i) / (x(i) - z(i));
          alpha = std::min(alpha, a);
        }
      }
      x += alpha * (z - x);
      // Retire coordinates that hit the boundary.
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i : passive_list) {
        if (x(i) > 1e-14) {
          keep.push_back(i);
        } else {
          passive[i] = 0;
          x(i) = 0.0;
        }
      }
      passive_list = std::move(keep);
      if (passive_list.empty()) break;
      solve_passive(z);
    }
    if (passive_list.empty()) {
      x.setZero();
      w = A.transpose() * b;
      continue;
    }
    x = z;
    w = A.transpose() * (b - A * x);
  }
  return x.cwiseMax(0.0);
}

}  // namespace unitsep
