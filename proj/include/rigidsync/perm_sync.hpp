#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "rigidsync/eigen_sym.hpp"
#include "rigidsync/types.hpp"

namespace rigidsync {

// Row-stochastic point-to-point matching scores between one ordered scan pair.
struct SoftAssignment {
  int source = -1;
  int target = -1;
  Mat matrix;  // N x N, rows sum to 1
};

// Per-point flow reliabilities for one ordered scan pair, plus their mean,
// which acts as the pair's weight inside the synchronization graph.
struct ConfidenceField {
  int source = -1;
  int target = -1;
  Vec per_point;
  double pair_weight = 0.0;
};

// Spectral synchronization output: the universe embedding (eigenvector stack)
// and every off-diagonal block of embedding * embedding^T.  The embedding is
// only defined up to a right-orthogonal gauge; the blocks are gauge-free.
struct SyncedCorrespondences {
  Mat universe_embedding;  // (K*N) x N
  Vec eigenvalues;         // the N smallest, ascending
  PairTable<Mat> blocks;   // blocks.at(k, l) is N x N
  int scans = 0;
  int points = 0;
};

// Soft assignment induced by warping the source cloud with its flow and
// comparing against every target point: row-wise softmax of -dist^2 / tau.
inline SoftAssignment soft_assignment_from_flow(const PointCloud& xk, const PointCloud& xl,
                                                const FlowField& flow, const SyncConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(xk.points.rows());
  require(xl.points.rows() == n && flow.vectors.rows() == n, ErrorCode::ShapeMismatch,
          "clouds and flow must agree on the point count");
  require(flow.source == xk.scan_id && flow.target == xl.scan_id, ErrorCode::ShapeMismatch,
          "flow endpoints do not match the given clouds");
  require_finite(xk.points, "source points");
  require_finite(xl.points, "target points");
  require_finite(flow.vectors, "flow vectors");

  SoftAssignment out;
  out.source = xk.scan_id;
  out.target = xl.scan_id;
  out.matrix.resize(n, n);
  const PointMatrix warped = xk.points + flow.vectors;
  for (int i = 0; i < n; ++i) {
    Vec score = -(xl.points.rowwise() - warped.row(i)).rowwise().squaredNorm() / cfg.tau;
    score.array() -= score.maxCoeff();  // shift-invariant; keeps exp() in range
    Vec row = score.array().exp();
    out.matrix.row(i) = row.transpose() / row.sum();
  }
  return out;
}

// A pair's weight is the average of its per-point confidences.
inline double pair_weight(const Vec& per_point) {
  require(per_point.size() > 0, ErrorCode::EmptyInput, "confidence list is empty");
  return per_point.mean();
}

// Transpose of a row-stochastic matrix, renormalized to be row-stochastic
// again.  Used when only one direction of a pair was computed.
inline Mat transpose_renormalize(const Mat& p) {
  Mat q = p.transpose();
  for (int i = 0; i < q.rows(); ++i) {
    const double s = q.row(i).sum();
    if (s > 1e-300)
      q.row(i) /= s;
    else
      q.row(i).setConstant(1.0 / static_cast<double>(q.cols()));
  }
  return q;
}

// Weighted graph connection Laplacian over all scan pairs: diagonal blocks
// w^k I with w^k the total weight at scan k, off-diagonal blocks -w^{kl} P^{kl},
// then symmetrized.  A disconnected weight graph still assembles (the zero
// matrix for an all-zero K=2 problem); synchronization is where that fails.
inline Mat build_weighted_gcl(const PairTable<Mat>& assignments, const PairTable<double>& weights,
                              int n) {
  const int k = assignments.scan_count();
  require(k >= 2 && weights.scan_count() == k, ErrorCode::ShapeMismatch,
          "need at least two scans and matching weight table");
  require(n >= 1, ErrorCode::ShapeMismatch, "point count must be positive");
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      const Mat& p = assignments.at(a, b);
      require(p.rows() == n && p.cols() == n, ErrorCode::MissingPair,
              "missing or misshapen assignment for pair (" + std::to_string(a) + "," +
                  std::to_string(b) + ")");
      require(std::abs(weights.at(a, b) - weights.at(b, a)) <= 1e-9, ErrorCode::WeightMismatch,
              "pair weights must be symmetric");
    }
  }

  Mat gcl = Mat::Zero(static_cast<Eigen::Index>(k) * n, static_cast<Eigen::Index>(k) * n);
  for (int a = 0; a < k; ++a) {
    double total = 0.0;
    for (int b = 0; b < k; ++b) {
      if (b == a) continue;
      total += weights.at(a, b);
      gcl.block(static_cast<Eigen::Index>(a) * n, static_cast<Eigen::Index>(b) * n, n, n) =
          -weights.at(a, b) * assignments.at(a, b);
    }
    gcl.block(static_cast<Eigen::Index>(a) * n, static_cast<Eigen::Index>(a) * n, n, n) =
        total * Mat::Identity(n, n);
  }
  return 0.5 * (gcl + gcl.transpose());
}

// Theorem-style spectral synchronization: the N eigenvectors with smallest
// eigenvalues span the universe embedding; consistent pairwise maps are read
// off the blocks of its self-product.
inline SyncedCorrespondences synchronize_permutations(const Mat& gcl, int k, int n) {
  require(k >= 2 && n >= 1, ErrorCode::ShapeMismatch, "need K >= 2 scans and N >= 1 points");
  require(gcl.rows() == static_cast<Eigen::Index>(k) * n && gcl.cols() == gcl.rows(),
          ErrorCode::ShapeMismatch, "connection Laplacian must be KN x KN");

  // A scan decoupled from the rest (all its coupling blocks zero) would make
  // the bottom eigenspace arbitrary, so reject that outright.
  std::vector<std::vector<bool>> edge(k, std::vector<bool>(k, false));
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      edge[a][b] = gcl.block(static_cast<Eigen::Index>(a) * n, static_cast<Eigen::Index>(b) * n, n,
                             n)
                       .cwiseAbs()
                       .maxCoeff() > 0.0;
    }
  require(pairs_connected(edge, k), ErrorCode::DisconnectedGraph,
          "nonzero-weight pair graph does not connect all scans");

  const EigenPairs bottom = take_extreme(sym_eigendecomp(gcl), n, SpectrumEnd::Smallest);

  SyncedCorrespondences out;
  out.scans = k;
  out.points = n;
  out.universe_embedding = bottom.vectors;
  out.eigenvalues = bottom.values;
  out.blocks = PairTable<Mat>(k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b)
        out.blocks.at(a, b) = bottom.vectors.middleRows(static_cast<Eigen::Index>(a) * n, n) *
                              bottom.vectors.middleRows(static_cast<Eigen::Index>(b) * n, n)
                                  .transpose();
  return out;
}

// Soft flow read-out from a synchronized block: each point moves toward the
// exp(block/t)-weighted average of the target points.  By default t scales
// with the largest block entry, since the block values are not calibrated.
inline FlowField induced_flow(const Mat& block, const PointCloud& xk, const PointCloud& xl,
                              const SyncConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(block.rows());
  require(block.cols() == n && xk.points.rows() == n && xl.points.rows() == n,
          ErrorCode::ShapeMismatch, "block and clouds must agree on the point count");
  require_finite(block, "synchronized block");
  require_finite(xk.points, "source points");
  require_finite(xl.points, "target points");

  double t = cfg.t_flow_absolute ? cfg.t_flow : cfg.t_flow * block.maxCoeff();
  if (!(t > 0.0)) t = 1.0;  // degenerate all-nonpositive block: fall back flat

  FlowField out;
  out.source = xk.scan_id;
  out.target = xl.scan_id;
  out.vectors.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    Vec score = block.row(i).transpose() / t;
    score.array() -= score.maxCoeff();  // shifts cancel in the weighted mean
    const Vec w = score.array().exp();
    const Vec3 avg = (xl.points.transpose() * w) / w.sum();
    out.vectors.row(i) = avg.transpose() - xk.points.row(i);
  }
  require_finite(out.vectors, "induced flow");
  return out;
}

// Consistency energy of a candidate universe embedding against the pairwise
// assignments: sum over ordered pairs of w^{kl} |P^k - P^{kl} P^l|_F^2.
inline double sync_energy(const Mat& pbar, const PairTable<Mat>& assignments,
                          const PairTable<double>& weights) {
  const int k = assignments.scan_count();
  require(k >= 2 && weights.scan_count() == k, ErrorCode::ShapeMismatch,
          "need at least two scans and matching weight table");
  const int n = static_cast<int>(pbar.cols());
  require(pbar.rows() == static_cast<Eigen::Index>(k) * n, ErrorCode::ShapeMismatch,
          "embedding must stack K blocks of N rows");

  double energy = 0.0;
  for (int a = 0; a < k; ++a) {
    const Mat pa = pbar.middleRows(static_cast<Eigen::Index>(a) * n, n);
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      const Mat pb = pbar.middleRows(static_cast<Eigen::Index>(b) * n, n);
      const Mat& pab = assignments.at(a, b);
      require(pab.rows() == n && pab.cols() == n, ErrorCode::ShapeMismatch,
              "assignment blocks must be N x N");
      energy += weights.at(a, b) * (pa - pab * pb).squaredNorm();
    }
  }
  return energy;
}

}  // namespace rigidsync
