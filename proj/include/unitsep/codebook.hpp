// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "unitsep/features.hpp"
#include "unitsep/rng.hpp"

namespace unitsep {

// J centroids in feature space; the discrete-unit alphabet.
struct Codebook {
  Eigen::MatrixXd centroids;  // J x D
  ExtractorFingerprint fingerprint;

  int J() const { return static_cast<int>(centroids.rows()); }
  int D() const { return static_cast<int>(centroids.cols()); }
  std::string id() const { return fingerprint.to_string(); }
};

// Discrete unit ids for one utterance.
struct UnitSequence {
  std::vector<int> ids;
  int frame_hop = 0;        // waveform samples per unit frame
  std::string codebook_id;  // fingerprint string of the producing codebook
  std::optional<int> speaker_id;

  std::size_t size() const { return ids.size(); }
};

struct KMeansTrace {
  std::vector<double> inertia;  // one entry per Lloyd iteration
  bool converged = false;
};

namespace detail {

inline Eigen::MatrixXd stack_frames(const std::vector<FeatureSequence>& corpus) {
  Eigen::Index total = 0;
  Eigen::Index dim = -1;
  for (const auto& f : corpus) {
    if (dim < 0) dim = f.dim();
    if (f.dim() != dim) throw ShapeError("train_codebook: inconsistent feature dims");
    total += f.num_frames();
  }
  if (total == 0) throw FormatError("train_codebook: empty corpus");
  Eigen::MatrixXd all(total, dim);
  Eigen::Index row = 0;
  for (const auto& f : corpus) {
    all.middleRows(row, f.num_frames()) = f.frames;
    row += f.num_frames();
  }
  if (!all.allFinite()) throw ShapeError("train_codebook: non-finite feature frame");
  return all;
}

inline std::size_t count_distinct_rows(const Eigen::MatrixXd& rows, std::size_t enough) {
  std::unordered_set<std::uint64_t> hashes;
  std::vector<double> buf(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) buf[j] = rows(i, j);
    hashes.insert(fnv1a64(buf.data(), buf.size() * sizeof(double)));
    if (hashes.size() >= enough) return hashes.size();
  }
  // Hash count is a lower bound on the true distinct count; fall back to an
  // exact check only when it comes up short.
  std::set<std::vector<double>> exact;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    std::vector<double> r(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) r[j] = rows(i, j);
    exact.insert(std::move(r));
    if (exact.size() >= enough) return exact.size();
  }
  return exact.size();
}

// Squared distances between every row of x and every centroid, via GEMM.
inline Eigen::MatrixXd pairwise_sq_dist(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c) {
  const Eigen::VectorXd xn = x.rowwise().squaredNorm();
  const Eigen::VectorXd cn = c.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * (x * c.transpose());
  d.colwise() += xn;
  d.rowwise() += cn.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace detail

// Lloyd's k-means with k-means++ seeding. Deterministic under (corpus, J,
// seed); inertia is recorded per iteration and is non-increasing.
inline Codebook train_codebook(const std::vector<FeatureSequence>& corpus, int J,
                               int max_iters, std::uint64_t seed,
                               const ExtractorFingerprint& fingerprint,
                               KMeansTrace* trace = nullptr) {
  if (J < 2) throw ConfigError("train_codebook: J must be >= 2");
  if (max_iters < 1) throw ConfigError("train_codebook: max_iters must be >= 1");
  const Eigen::MatrixXd frames = detail::stack_frames(corpus);
  const Eigen::Index M = frames.rows();
  const Eigen::Index D = frames.cols();
  if (detail::count_distinct_rows(frames, static_cast<std::size_t>(J)) <
      static_cast<std::size_t>(J)) {
    throw FormatError("train_codebook: corpus has fewer than J distinct frames");
  }

  Rng rng(seed);
  Eigen::MatrixXd centroids(J, D);

  // k-means++ seeding.
  centroids.row(0) = frames.row(static_cast<Eigen::Index>(rng.uniform_int(M)));
  Eigen::VectorXd best_d2 =
      (frames.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < J; ++j) {
    double total = best_d2.sum();
    Eigen::Index pick;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.uniform_int(M));
    } else {
      const double x = rng.uniform01() * total;
      double acc = 0.0;
      pick = M - 1;
      for (Eigen::Index i = 0; i < M; ++i) {
        acc += best_d2(i);
        if (x < acc) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(j) = frames.row(pick);
    best_d2 = best_d2.cwiseMin(
        (frames.rowwise() - centroids.row(j)).rowwise().squaredNorm());
  }

  std::vector<int> assign(M, -1);
  double prev_inertia = -1.0;
  bool converged = false;

  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::MatrixXd d2 = detail::pairwise_sq_dist(frames, centroids);
    double inertia = 0.0;
    bool changed = false;
    for (Eigen::Index i = 0; i < M; ++i) {
      int best = 0;
      double bd = d2(i, 0);
      for (int j = 1; j < J; ++j) {
        if (d2(i, j) < bd) {
          bd = d2(i, j);
          best = j;
        }
      }
      inertia += bd;
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (trace) trace->inertia.push_back(inertia);

    if (prev_inertia >= 0.0 &&
        (prev_inertia - inertia) <= 1e-6 * std::max(prev_inertia, 1e-300)) {
      converged = true;
      break;
    }
    prev_inertia = inertia;
    if (!changed && iter > 0) {
      converged = true;
      break;
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(J, D);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(J);
    for (Eigen::Index i = 0; i < M; ++i) {
      sums.row(assign[i]) += frames.row(i);
      counts(assign[i]) += 1.0;
    }
    std::vector<Eigen::Index> reseeded;
    for (int j = 0; j < J; ++j) {
      if (counts(j) > 0.0) {
        centroids.row(j) = sums.row(j) / counts(j);
      } else {
        // Re-seed an empty cluster at the point farthest from its centroid,
        // skipping points already taken by other empty clusters this round.
        Eigen::Index far = -1;
        double fd = -1.0;
        for (Eigen::Index i = 0; i < M; ++i) {
          if (std::find(reseeded.begin(), reseeded.end(), i) != reseeded.end()) {
            continue;
          }
          const double di =
              (frames.row(i) - centroids.row(assign[i])).squaredNorm();
          if (di > fd) {
            fd = di;
            far = i;
          }
        }
        if (far < 0) far = static_cast<Eigen::Index>(rng.uniform_int(M));
        reseeded.push_back(far);
        centroids.row(j) = frames.row(far);
      }
    }
  }
  if (trace) trace->converged = converged;

  for (int a = 0; a < J; ++a) {
    for (int b = a + 1; b < J; ++b) {
      if (centroids.row(a) == centroids.row(b)) {
        throw FormatError("train_codebook: duplicate centroids " + std::to_string(a) +
                          " and " + std::to_string(b));
      }
    }
  }

  Codebook cb;
  cb.centroids = std::move(centroids);
  cb.fingerprint = fingerprint;
  return cb;
}

// Nearest-centroid assignment per frame; ties break to the lowest index.
// Plain per-frame scan, so it is its own exhaustive search.
inline UnitSequence quantize(const FeatureSequence& z, const Codebook& cb) {
  if (z.dim() != cb.D()) {
    throw ShapeError("quantize: feature dim " + std::to_string(z.dim()) +
                     " != codebook dim " + std::to_string(cb.D()));
  }
  UnitSequence y;
  y.frame_hop = cb.fingerprint.frame_hop();
  y.codebook_id = cb.id();
  y.ids.resize(z.num_frames());
  for (Eigen::Index n = 0; n < z.num_frames(); ++n) {
    int best = 0;
    double bd = (z.frames.row(n) - cb.centroids.row(0)).squaredNorm();
    for (int j = 1; j < cb.J(); ++j) {
      const double d = (z.frames.row(n) - cb.centroids.row(j)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    y.ids[n] = best;
  }
  return y;
}

// Unit ids back to centroid features.
inline FeatureSequence lookup(const UnitSequence& y, const Codebook& cb) {
  if (y.codebook_id != cb.id()) {
    throw FormatError("lookup: unit sequence fingerprint '" + y.codebook_id +
                      "' does not match codebook '" + cb.id() + "'");
  }
  FeatureSequence out;
  out.hop = y.frame_hop;
  out.sample_rate = cb.fingerprint.sample_rate;
  out.frames.resize(static_cast<Eigen::Index>(y.size()), cb.D());
  for (std::size_t n = 0; n < y.size(); ++n) {
    const int id = y.ids[n];
    if (id < 0 || id >= cb.J()) throw ShapeError("lookup: unit id out of range");
    out.frames.row(static_cast<Eigen::Index>(n)) = cb.centroids.row(id);
  }
  return out;
}

struct UnitStatistics {
  std::vector<std::int64_t> histogram;
  std::size_t total = 0;
  double entropy_nats = 0.0;
  double perplexity = 1.0;
};

inline UnitStatistics unit_statistics(const std::vector<UnitSequence>& ys, int J) {
  if (ys.empty()) throw FormatError("unit_statistics: empty collection");
  UnitStatistics st;
  st.histogram.assign(J, 0);
  for (const auto& y : ys) {
    for (int id : y.ids) {
      if (id < 0 || id >= J) throw ShapeError("unit_statistics: id out of range");
      ++st.histogram[id];
      ++st.total;
    }
  }
  if (st.total == 0) throw FormatError("unit_statistics: no units");
  for (std::int64_t c : st.histogram) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / st.total;
    st.entropy_nats -= p * std::log(p);
  }
  st.perplexity = std::exp(st.entropy_nats);
  return st;
}

// ---------------------------------------------------------------- file I/O

// Codebook file: one text header line
//   UNITCB1 <J> <D> <hop> <downsample> <sample_rate>
// followed by J*D little-endian float32 centroid values, row-major.
inline void save_codebook(const Codebook& cb, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_codebook: cannot open '" + path + "'");
  f << "UNITCB1 " << cb.J() << " " << cb.D() << " " << cb.fingerprint.hop << " "
    << cb.fingerprint.downsample << " " << cb.fingerprint.sample_rate << "\n";
  for (int j = 0; j < cb.J(); ++j) {
    for (int d = 0; d < cb.D(); ++d) {
      const float v = static_cast<float>(cb.centroids(j, d));
      f.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
  if (!f) throw IoError("save_codebook: write failure on '" + path + "'");
}

inline Codebook load_codebook(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_codebook: cannot open '" + path + "'");
  std::string magic;
  int J = 0, D = 0;
  Codebook cb;
  f >> magic >> J >> D >> cb.fingerprint.hop >> cb.fingerprint.downsample >>
      cb.fingerprint.sample_rate;
  if (!f || magic != "UNITCB1") throw FormatError("load_codebook: bad header in '" + path + "'");
  f.ignore(1);  // newline
  if (J < 2 || D < 1) throw FormatError("load_codebook: bad dimensions in '" + path + "'");
  cb.fingerprint.dim = D;
  cb.centroids.resize(J, D);
  for (int j = 0; j < J; ++j) {
    for (int d = 0; d < D; ++d) {
      float v = 0.0f;
      f.read(reinterpret_cast<char*>(&v), sizeof(float));
      cb.centroids(j, d) = v;
    }
  }
  if (!f) throw FormatError("load_codebook: truncated centroid data in '" + path + "'");
  return cb;
}

// Unit-sequence file: one text header line carrying frame hop and codebook
// fingerprint, then newline-delimited unit ids.
inline void save_units(const UnitSequence& y, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_units: cannot open '" + path + "'");
  f << "UNITSEQ1 frame_hop=" << y.frame_hop << " codebook=" << y.codebook_id;
  if (y.speaker_id) f << " speaker=" << *y.speaker_id;
  f << "\n";
  for (int id : y.ids) f << id << "\n";
  if (!f) throw IoError("save_units: write failure on '" + path + "'");
}

inline UnitSequence load_units(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_units: cannot open '" + path + "'");
  std::string header;
  if (!std::getline(f, header)) throw FormatError("load_units: empty file '" + path + "'");
  UnitSequence y;
  std::istringstream hs(header);
  std::string magic, tok;
  hs >> magic;
  if (magic != "UNITSEQ1") throw FormatError("load_units: bad header in '" + path + "'");
  while (hs >> tok) {
    if (tok.rfind("frame_hop=", 0) == 0) {
      y.frame_hop = std::stoi(tok.substr(10));
    } else if (tok.rfind("codebook=", 0) == 0) {
      y.codebook_id = tok.substr(9);
    } else if (tok.rfind("speaker=", 0) == 0) {
      y.speaker_id = std::stoi(tok.substr(8));
    }
  }
  int id;
  while (f >> id) y.ids.push_back(id);
  return y;
}

}  // namespace unitsep
