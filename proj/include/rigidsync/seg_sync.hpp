#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rigidsync/eigen_sym.hpp"
#include "rigidsync/frontend.hpp"
#include "rigidsync/types.hpp"

namespace rigidsync {

// All pairwise same-part scores stacked into one symmetric KN x KN matrix
// with zero diagonal blocks.
struct StackedSegmentation {
  int scans = 0;
  int points = 0;
  Mat matrix;
};

// Spectrally synchronized segmentation: scaled leading eigenvectors of the
// stacked matrix (gamma_raw), their row-softmax (fuzzy), and argmax labels.
// Eigenvalues are kept in descending order.
struct AbsoluteSegmentation {
  int parts = 0;
  Mat gamma_raw;                // KN x S, eigenvectors scaled by sqrt(eigenvalue)
  Mat fuzzy;                    // KN x S, rows sum to 1
  std::vector<int> hard_labels; // KN, row-argmax (ties -> lowest index)
  Vec eigenvalues;              // S values, descending
};

// Verification artifact for the weighted synchronization theory: the per-part
// K x K eigenproblem, its leading pairs, and the reconstruction residual.
struct ScalingOracleResult {
  std::vector<Mat> j;  // per part: K x K coupling matrix
  std::vector<Vec> d;  // per part: leading eigenvector, unit norm, non-negative
  Vec lambda;          // per part: leading eigenvalue
  double residual = 0.0;
};

// Divide out the mean so pairs computed at different sharpness become
// comparable.  An (almost) all-zero block carries no signal and is reported
// as such so the caller can drop the pair.
inline RelativeSegmentation normalize_relative(const RelativeSegmentation& z) {
  require(z.zhat.size() > 0, ErrorCode::EmptyInput, "segmentation block is empty");
  require_finite(z.zhat, "segmentation block");
  const double q = z.zhat.mean();
  require(q > 1e-12, ErrorCode::AllZero, "segmentation block has (near-)zero mean");
  RelativeSegmentation out;
  out.source = z.source;
  out.target = z.target;
  out.zhat = z.zhat / q;
  return out;
}

// Stack per-pair blocks into the full KN x KN matrix: block (k,l) for k<l,
// its transpose at (l,k), zero diagonal blocks.  Either direction of a pair
// may be supplied (empty matrix = absent); both directions are averaged.
inline StackedSegmentation build_stacked(const PairTable<Mat>& blocks, int n) {
  const int k = blocks.scan_count();
  require(k >= 2 && n >= 1, ErrorCode::ShapeMismatch, "need K >= 2 scans and N >= 1 points");

  StackedSegmentation out;
  out.scans = k;
  out.points = n;
  out.matrix = Mat::Zero(static_cast<Eigen::Index>(k) * n, static_cast<Eigen::Index>(k) * n);
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      const Mat& fwd = blocks.at(a, b);
      const Mat& rev = blocks.at(b, a);
      const bool has_fwd = fwd.size() > 0;
      const bool has_rev = rev.size() > 0;
      require(has_fwd || has_rev, ErrorCode::MissingPair,
              "no segmentation block for pair (" + std::to_string(a) + "," + std::to_string(b) +
                  ")");
      Mat z;
      if (has_fwd && has_rev)
        z = 0.5 * (fwd + rev.transpose());
      else
        z = has_fwd ? fwd : Mat(rev.transpose());
      require(z.rows() == n && z.cols() == n, ErrorCode::ShapeMismatch,
              "segmentation blocks must be N x N");
      out.matrix.block(static_cast<Eigen::Index>(a) * n, static_cast<Eigen::Index>(b) * n, n, n) =
          z;
      out.matrix.block(static_cast<Eigen::Index>(b) * n, static_cast<Eigen::Index>(a) * n, n, n) =
          z.transpose();
    }
  }
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  return out;
}

// Part count from the spectrum: the number of eigenvalues above alpha percent
// of the head (first min(10, KN) eigenvalues, descending) mass.  Clamped to
// [1, KN].
inline int estimate_part_count(const StackedSegmentation& z, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  const Vec asc = sym_eigendecomp(z.matrix).values;
  const int kn = static_cast<int>(asc.size());
  Vec desc = asc.reverse();
  double head = 0.0;
  for (int i = 0; i < std::min(10, kn); ++i) head += desc(i);
  const double threshold = 0.01 * alpha * head;  // alpha is in percent
  int count = 0;
  for (int i = 0; i < kn; ++i)
    if (desc(i) > threshold) ++count;
  return std::clamp(count, 1, kn);
}

// Scaled leading eigenvectors of the stacked matrix give the absolute
// segmentation.  Small negative eigenvalues (round-off from the zero
// diagonal) clamp to zero; a decidedly negative one in the leading S signals
// inconsistent input and is rejected.
inline AbsoluteSegmentation synchronize_segmentation(const StackedSegmentation& z, int parts) {
  const Eigen::Index kn = z.matrix.rows();
  require(parts >= 1 && parts <= kn, ErrorCode::ShapeMismatch,
          "part count must lie in [1, KN]");
  const EigenPairs top = take_extreme(sym_eigendecomp(z.matrix), parts, SpectrumEnd::Largest);

  AbsoluteSegmentation out;
  out.parts = parts;
  out.eigenvalues = top.values.reverse();  // descending
  out.gamma_raw.resize(kn, parts);
  for (int s = 0; s < parts; ++s) out.gamma_raw.col(s) = top.vectors.col(parts - 1 - s);

  const double leading = out.eigenvalues(0);
  require(out.eigenvalues(parts - 1) >= -1e-6 * std::abs(leading),
          ErrorCode::NegativeLeadingEigenvalue,
          "leading spectrum contains a decidedly negative eigenvalue");
  for (int s = 0; s < parts; ++s)
    out.gamma_raw.col(s) *= std::sqrt(std::max(out.eigenvalues(s), 0.0));

  out.fuzzy.resize(kn, parts);
  out.hard_labels.resize(static_cast<size_t>(kn));
  for (Eigen::Index i = 0; i < kn; ++i) {
    Vec row = out.gamma_raw.row(i).transpose();
    int best = 0;
    for (int s = 1; s < parts; ++s)
      if (row(s) > row(best)) best = s;
    out.hard_labels[static_cast<size_t>(i)] = best;
    row.array() -= row.maxCoeff();
    const Vec e = row.array().exp();
    out.fuzzy.row(i) = e.transpose() / e.sum();
  }
  return out;
}

// Ground-truth verification oracle for weighted segmentation synchronization:
// with binary part indicators G^k and pairwise positive weights, the scaled
// stacked matrix has per-part eigenvectors whose scan coefficients solve a
// small K x K eigenproblem J^s d^s = lambda_s d^s with J^s_{kl} = w^{kl} n^l_s.
// The reported residual measures how exactly the reassembled eigenvectors
// satisfy the full KN x KN problem.
inline ScalingOracleResult weighted_scaling_oracle(const std::vector<std::vector<int>>& labels,
                                                   const PairTable<double>& sigmas) {
  const int k = static_cast<int>(labels.size());
  require(k >= 2 && sigmas.scan_count() == k, ErrorCode::ShapeMismatch,
          "need labels for K >= 2 scans and a matching weight table");
  const int n = static_cast<int>(labels[0].size());
  require(n >= 1, ErrorCode::InvalidLabels, "scans must be non-empty");
  int parts = 0;
  for (const auto& scan : labels) {
    require(static_cast<int>(scan.size()) == n, ErrorCode::LengthMismatch,
            "all scans must carry the same number of labels");
    for (int v : scan) {
      require(v >= 0, ErrorCode::InvalidLabels, "labels must be non-negative");
      parts = std::max(parts, v + 1);
    }
  }
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b)
        require(sigmas.at(a, b) > 0.0, ErrorCode::InvalidConfig, "pair weights must be positive");

  // Indicators and per-scan part sizes.
  std::vector<Mat> g(k, Mat::Zero(n, parts));
  Mat counts = Mat::Zero(k, parts);
  for (int a = 0; a < k; ++a)
    for (int i = 0; i < n; ++i) {
      g[a](i, labels[a][i]) = 1.0;
      counts(a, labels[a][i]) += 1.0;
    }

  ScalingOracleResult out;
  out.lambda.resize(parts);
  for (int s = 0; s < parts; ++s) {
    Mat j = Mat::Zero(k, k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        if (a != b) j(a, b) = sigmas.at(a, b) * counts(b, s);

    // Leading eigenpair by power iteration; shifting by the largest row sum
    // makes the dominant eigenvalue strictly separated for this non-negative
    // matrix (plain iteration can oscillate between +/- pairs at K=2).
    const double shift = j.cwiseAbs().rowwise().sum().maxCoeff() + 1.0;
    Vec d = Vec::Constant(k, 1.0 / std::sqrt(static_cast<double>(k)));
    for (int it = 0; it < 20000; ++it) {
      Vec next = j * d + shift * d;
      next /= next.norm();
      const double delta = (next - d).norm();
      d = next;
      if (delta < 1e-15) break;
    }
    if (d.sum() < 0.0) d = -d;
    int anchor = 0;
    d.cwiseAbs().maxCoeff(&anchor);
    out.lambda(s) = (j * d)(anchor) / d(anchor);
    out.j.push_back(j);
    out.d.push_back(d);
  }

  // Reassemble the stacked eigenvector matrix and measure the residual of the
  // full eigenproblem.
  Mat ztilde = Mat::Zero(static_cast<Eigen::Index>(k) * n, static_cast<Eigen::Index>(k) * n);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b)
        ztilde.block(static_cast<Eigen::Index>(a) * n, static_cast<Eigen::Index>(b) * n, n, n) =
            sigmas.at(a, b) * g[a] * g[b].transpose();

  Mat gamma(static_cast<Eigen::Index>(k) * n, parts);
  for (int a = 0; a < k; ++a) {
    Vec scale(parts);
    for (int s = 0; s < parts; ++s) scale(s) = out.d[s](a);
    gamma.middleRows(static_cast<Eigen::Index>(a) * n, n) = g[a] * scale.asDiagonal();
  }
  const double denom = gamma.norm();
  require(denom > 0.0, ErrorCode::InvalidLabels, "indicator stack collapsed to zero");
  out.residual = (ztilde * gamma - gamma * out.lambda.asDiagonal()).norm() / denom;
  return out;
}

}  // namespace rigidsync
