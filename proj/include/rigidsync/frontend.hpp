#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "rigidsync/kabsch.hpp"
#include "rigidsync/perm_sync.hpp"
#include "rigidsync/types.hpp"

namespace rigidsync {

// Per-point rigid motions estimated from one scan pair's flow.
struct LocalTransformField {
  int source = -1;
  int target = -1;
  std::vector<RigidTransform> transforms;
  std::vector<bool> degenerate;  // true where the local fit fell back to translation
};

// Pairwise motion-consistency residuals: beta[d](i, j) is coordinate d of the
// mismatch between moving target point j with point i's local transform versus
// its own reverse flow.
struct ResidualMatrix {
  int source = -1;
  int target = -1;
  std::array<Mat, 3> beta;
};

// Soft same-part scores for one ordered scan pair, entries in [0, 1] as
// produced; mean-normalization (done downstream) may push entries above 1.
struct RelativeSegmentation {
  int source = -1;
  int target = -1;
  Mat zhat;
};

// Nearest-neighbor flow: each source point moves onto its closest target
// point.  Distance ties break toward the lowest target index.
inline FlowField nn_flow(const PointCloud& xk, const PointCloud& xl) {
  require(xk.points.rows() > 0 && xl.points.rows() > 0, ErrorCode::EmptyCloud,
          "both clouds must be non-empty");
  require_finite(xk.points, "source points");
  require_finite(xl.points, "target points");

  FlowField out;
  out.source = xk.scan_id;
  out.target = xl.scan_id;
  out.vectors.resize(xk.points.rows(), 3);
  for (Eigen::Index i = 0; i < xk.points.rows(); ++i) {
    Eigen::Index best = 0;
    double best_d = (xl.points.row(0) - xk.points.row(i)).squaredNorm();
    for (Eigen::Index j = 1; j < xl.points.rows(); ++j) {
      const double d = (xl.points.row(j) - xk.points.row(i)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out.vectors.row(i) = xl.points.row(best) - xk.points.row(i);
  }
  return out;
}

// Gaussian kernel on the distance each warped point misses its nearest
// target: c_i = exp(-r_i^2 / sigma_c^2).  A flow that lands every point on a
// target scores 1 everywhere; garbage flows decay to ~0.
inline ConfidenceField flow_confidence(const PointCloud& xk, const PointCloud& xl,
                                       const FlowField& flow, const FrontendConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = xk.points.rows();
  require(flow.vectors.rows() == n && xl.points.rows() > 0, ErrorCode::ShapeMismatch,
          "flow must cover the source cloud and the target must be non-empty");
  require_finite(xk.points, "source points");
  require_finite(xl.points, "target points");
  require_finite(flow.vectors, "flow vectors");

  ConfidenceField out;
  out.source = xk.scan_id;
  out.target = xl.scan_id;
  out.per_point.resize(n);
  const PointMatrix warped = xk.points + flow.vectors;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r2 = (xl.points.rowwise() - warped.row(i)).rowwise().squaredNorm().minCoeff();
    out.per_point(i) = std::exp(-r2 / (cfg.sigma_c * cfg.sigma_c));
  }
  out.pair_weight = pair_weight(out.per_point);
  return out;
}

// Indices of the knn nearest neighbors of every point within its own cloud,
// self included, ordered by (distance, index).
inline std::vector<std::vector<int>> knn_indices(const PointMatrix& pts, int knn) {
  const int n = static_cast<int>(pts.rows());
  require(knn >= 1 && knn <= n, ErrorCode::InvalidConfig,
          "neighborhood size must be in [1, point count]");
  std::vector<std::vector<int>> out(n);
  std::vector<std::pair<double, int>> order(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) order[j] = {(pts.row(j) - pts.row(i)).squaredNorm(), j};
    std::partial_sort(order.begin(), order.begin() + knn, order.end());
    out[i].resize(knn);
    for (int j = 0; j < knn; ++j) out[i][j] = order[j].second;
  }
  return out;
}

// Per-point rigid motions: each point gets the weighted rigid fit of its knn
// source neighborhood onto the flow-displaced positions, weighted by flow
// confidence.  Rank-deficient neighborhoods fall back to pure translation.
inline LocalTransformField local_rigid_transforms(
    const PointCloud& xk, const PointCloud& xl, const FlowField& flow, const FrontendConfig& cfg,
    const std::vector<std::vector<int>>& neighborhoods, const Vec& confidence) {
  const int n = static_cast<int>(xk.points.rows());
  require(static_cast<int>(neighborhoods.size()) == n && confidence.size() == n &&
              flow.vectors.rows() == n,
          ErrorCode::ShapeMismatch, "neighborhoods, confidence and flow must cover the cloud");

  LocalTransformField out;
  out.source = xk.scan_id;
  out.target = xl.scan_id;
  out.transforms.resize(n);
  out.degenerate.assign(n, false);
  const int knn = cfg.knn;
  PointMatrix src(knn, 3), dst(knn, 3);
  Vec w(knn);
  for (int i = 0; i < n; ++i) {
    require(static_cast<int>(neighborhoods[i].size()) == knn, ErrorCode::ShapeMismatch,
            "each neighborhood must hold exactly knn indices");
    for (int j = 0; j < knn; ++j) {
      const int idx = neighborhoods[i][j];
      src.row(j) = xk.points.row(idx);
      dst.row(j) = xk.points.row(idx) + flow.vectors.row(idx);
      // Tiny floor keeps the fit defined when every confidence underflows.
      w(j) = confidence(idx) + 1e-12;
    }
    const KabschResult fit = weighted_kabsch(src, dst, w);
    out.transforms[i] = fit.transform;
    out.degenerate[i] = fit.degenerate;
  }
  return out;
}

inline LocalTransformField local_rigid_transforms(const PointCloud& xk, const PointCloud& xl,
                                                  const FlowField& flow,
                                                  const FrontendConfig& cfg) {
  cfg.validate();
  require(xk.points.rows() >= cfg.knn, ErrorCode::InvalidConfig,
          "cloud smaller than the requested neighborhood");
  return local_rigid_transforms(xk, xl, flow, cfg, knn_indices(xk.points, cfg.knn),
                                flow_confidence(xk, xl, flow, cfg).per_point);
}

// Residual matrix between a source scan's local transforms and the target
// scan's reverse flow: beta_ij = (T'_i)^{-1}(x^l_j) - (x^l_j + f^{lk}_j).
// Near-zero exactly when i and j ride the same rigid motion.
inline ResidualMatrix residual_beta(const LocalTransformField& ltf, const PointCloud& xl,
                                    const FlowField& flow_lk) {
  const int n = static_cast<int>(xl.points.rows());
  require(static_cast<int>(ltf.transforms.size()) == n && flow_lk.vectors.rows() == n,
          ErrorCode::ShapeMismatch, "transforms, target cloud and reverse flow must align");
  require(flow_lk.source == ltf.target && flow_lk.target == ltf.source &&
              xl.scan_id == ltf.target,
          ErrorCode::ShapeMismatch, "reverse flow endpoints do not match the transform field");
  require_finite(xl.points, "target points");
  require_finite(flow_lk.vectors, "reverse flow");

  ResidualMatrix out;
  out.source = ltf.source;
  out.target = ltf.target;
  for (auto& m : out.beta) m.resize(n, n);
  const PointMatrix pulled_back = xl.points + flow_lk.vectors;
  for (int i = 0; i < n; ++i) {
    const RigidTransform inv = ltf.transforms[i].inverse();
    const PointMatrix mapped = transform_points(inv, xl.points);
    for (int j = 0; j < n; ++j) {
      const Vec3 r = (mapped.row(j) - pulled_back.row(j)).transpose();
      out.beta[0](i, j) = r(0);
      out.beta[1](i, j) = r(1);
      out.beta[2](i, j) = r(2);
    }
  }
  for (const auto& m : out.beta) require_finite(m, "residual matrix");
  return out;
}

// Same-part likelihood from residual magnitude: z_ij = exp(-|beta_ij|^2 / sigma_z^2).
inline RelativeSegmentation relative_segmentation(const ResidualMatrix& beta,
                                                  const FrontendConfig& cfg) {
  cfg.validate();
  for (const auto& m : beta.beta) require_finite(m, "residual matrix");
  RelativeSegmentation out;
  out.source = beta.source;
  out.target = beta.target;
  const Mat norm2 = beta.beta[0].array().square() + beta.beta[1].array().square() +
                    beta.beta[2].array().square();
  out.zhat = (-norm2.array() / (cfg.sigma_z * cfg.sigma_z)).exp();
  return out;
}

}  // namespace rigidsync
