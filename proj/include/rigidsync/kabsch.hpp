#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "rigidsync/types.hpp"

namespace rigidsync {

struct KabschResult {
  RigidTransform transform;
  bool degenerate = false;  // rank-deficient fit; rotation fell back to identity
};

// Apply a rigid transform to every row of a point matrix.
inline PointMatrix transform_points(const RigidTransform& t, const PointMatrix& pts) {
  return (pts * t.rotation.transpose()).rowwise() + t.translation.transpose();
}

// Weighted least-squares rigid alignment of src onto dst: minimizes
// sum_i w_i |R src_i + t - dst_i|^2 over SE(3).  Reflections are corrected by
// flipping the smallest singular direction.  A weighted covariance of rank
// below 2 cannot pin down a rotation, so the fit degrades to the weighted
// mean translation with R = I and reports that.
inline KabschResult weighted_kabsch(const PointMatrix& src, const PointMatrix& dst,
                                    const Vec& weights) {
  const Eigen::Index m = src.rows();
  require(dst.rows() == m && weights.size() == m, ErrorCode::ShapeMismatch,
          "src, dst and weights must agree on the point count");
  require_finite(src, "src points");
  require_finite(dst, "dst points");
  require_finite(weights, "weights");
  require(weights.minCoeff() >= 0.0, ErrorCode::InvalidConfig, "weights must be non-negative");
  const double total = weights.sum();
  require(total > 0.0, ErrorCode::EmptyInput, "total weight must be positive");
  require((weights.array() > 0.0).count() >= 3, ErrorCode::EmptyInput,
          "need at least 3 points with positive weight");

  const Vec3 c_src = (src.transpose() * weights) / total;
  const Vec3 c_dst = (dst.transpose() * weights) / total;
  const PointMatrix a = src.rowwise() - c_src.transpose();
  const PointMatrix b = dst.rowwise() - c_dst.transpose();
  const Mat3 h = a.transpose() * weights.asDiagonal() * b;

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();

  KabschResult out;
  if (sv(0) <= 0.0 || sv(1) <= 1e-8 * sv(0)) {
    out.degenerate = true;
    out.transform.rotation = Mat3::Identity();
    out.transform.translation = c_dst - c_src;  // weighted mean displacement
    return out;
  }

  Mat3 flip = Mat3::Identity();
  flip(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  out.transform.rotation = svd.matrixV() * flip * svd.matrixU().transpose();
  out.transform.translation = c_dst - out.transform.rotation * c_src;
  return out;
}

}  // namespace rigidsync
