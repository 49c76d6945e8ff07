#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rigidsync {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
// N x 3, one point per row.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

enum class ErrorCode {
  NonFinite,
  NotSymmetric,
  CountTooLarge,
  MissingPair,
  WeightMismatch,
  TemperatureNonPositive,
  EmptyInput,
  EmptyCloud,
  DisconnectedGraph,
  AllZero,
  NegativeLeadingEigenvalue,
  InvalidLabels,
  LengthMismatch,
  ShapeMismatch,
  InvalidConfig,
  ParseError,
  IoError,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::CountTooLarge: return "CountTooLarge";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::WeightMismatch: return "WeightMismatch";
    case ErrorCode::TemperatureNonPositive: return "TemperatureNonPositive";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::NegativeLeadingEigenvalue: return "NegativeLeadingEigenvalue";
    case ErrorCode::InvalidLabels: return "InvalidLabels";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_name(code)) + ": " + msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

inline void require_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) fail(ErrorCode::NonFinite, what + " contains a non-finite value");
}

// ---------------------------------------------------------------------------
// Geometry

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  // this ∘ other: apply `other` first, then `this`.
  RigidTransform compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }
};

struct PointCloud {
  PointMatrix points;  // N x 3
  int scan_id = 0;

  int size() const { return static_cast<int>(points.rows()); }
};

struct ScanSet {
  std::vector<PointCloud> clouds;

  int scan_count() const { return static_cast<int>(clouds.size()); }
  int points_per_scan() const { return clouds.empty() ? 0 : clouds.front().size(); }

  void validate() const {
    require(clouds.size() >= 2, ErrorCode::InvalidConfig, "scan set needs at least 2 scans");
    const int n = clouds.front().size();
    require(n >= 1, ErrorCode::EmptyCloud, "scan 0 is empty");
    for (const auto& c : clouds) {
      require(c.size() == n, ErrorCode::ShapeMismatch, "scans have differing point counts");
      require(c.points.allFinite(), ErrorCode::NonFinite, "scan contains non-finite coordinates");
    }
  }
};

// Dense per-point displacement from scan `source` into scan `target`.
struct FlowField {
  int source = 0;
  int target = 0;
  PointMatrix vectors;  // N x 3
};

// Per-part rigid poses for every scan, expressed relative to a canonical scan:
// poses[canonical_scan][s] is the identity and poses[k][s] maps part-s points
// from the canonical scan into scan k.
struct PoseSet {
  enum class FitStatus { Ok, EmptyPart, Degenerate };

  std::vector<std::vector<RigidTransform>> poses;  // [scan][part]
  std::vector<std::vector<FitStatus>> status;      // [scan][part]
  int canonical_scan = 0;

  int scan_count() const { return static_cast<int>(poses.size()); }
  int part_count() const { return poses.empty() ? 0 : static_cast<int>(poses.front().size()); }
};

// ---------------------------------------------------------------------------
// Ordered-pair table: one slot per ordered scan pair (k, l), k != l.

template <typename T>
class PairTable {
 public:
  PairTable() = default;
  explicit PairTable(int k) : k_(k), slots_(static_cast<size_t>(k) * k) {}

  int scan_count() const { return k_; }

  T& at(int k, int l) {
    check(k, l);
    return slots_[static_cast<size_t>(k) * k_ + l];
  }
  const T& at(int k, int l) const {
    check(k, l);
    return slots_[static_cast<size_t>(k) * k_ + l];
  }

 private:
  void check(int k, int l) const {
    require(k >= 0 && k < k_ && l >= 0 && l < k_, ErrorCode::ShapeMismatch, "pair index out of range");
    require(k != l, ErrorCode::ShapeMismatch, "pair table has no diagonal entries");
  }

  int k_ = 0;
  std::vector<T> slots_;
};

// Connectivity of the undirected pair graph given a K x K edge mask
// (diagonal ignored).  Used to reject synchronization problems whose
// nonzero-weight graph does not couple all scans.
inline bool pairs_connected(const std::vector<std::vector<bool>>& edge, int k) {
  if (k <= 0) return false;
  std::vector<bool> seen(k, false);
  std::vector<int> stack = {0};
  seen[0] = true;
  while (!stack.empty()) {
    const int a = stack.back();
    stack.pop_back();
    for (int b = 0; b < k; ++b) {
      if (b == a || seen[b]) continue;
      if (edge[a][b] || edge[b][a]) {
        seen[b] = true;
        stack.push_back(b);
      }
    }
  }
  for (int a = 0; a < k; ++a)
    if (!seen[a]) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Configuration

struct SyncConfig {
  double tau = 0.01;    // soft-assignment temperature on squared distances
  double t_flow = 0.03; // flow-readout temperature; by default a fraction of
                        // the largest correspondence-block entry
  bool t_flow_absolute = false;

  void validate() const {
    require(std::isfinite(tau) && tau > 0, ErrorCode::TemperatureNonPositive, "tau must be > 0");
    require(std::isfinite(t_flow) && t_flow > 0, ErrorCode::TemperatureNonPositive, "t_flow must be > 0");
  }
};

struct FrontendConfig {
  int knn = 16;          // neighborhood size for local rigid fits (includes the point itself)
  double sigma_c = 0.05; // confidence kernel bandwidth, scene units
  double sigma_z = 0.10; // motion-residual kernel bandwidth, scene units
  double eps_f = 0.1;    // flow-inlier threshold, scene units (diagnostic)

  void validate() const {
    require(knn >= 3, ErrorCode::InvalidConfig, "knn must be >= 3");
    require(std::isfinite(sigma_c) && sigma_c > 0, ErrorCode::InvalidConfig, "sigma_c must be > 0");
    require(std::isfinite(sigma_z) && sigma_z > 0, ErrorCode::InvalidConfig, "sigma_z must be > 0");
    require(std::isfinite(eps_f) && eps_f > 0, ErrorCode::InvalidConfig, "eps_f must be > 0");
  }
};

struct PipelineConfig {
  SyncConfig sync;
  FrontendConfig frontend;
  int iterations = 4;
  double alpha = 0.15;     // part-count threshold, in percent of the top-spectrum mass
  int canonical_scan = 0;
  int parts_override = 0;  // 0 = estimate the part count per iteration
  bool no_sync = false;        // ablation: skip correspondence synchronization
  bool unweighted = false;     // ablation: unit pair weights in synchronization
  bool unnormalized_z = false; // ablation: skip per-pair segmentation normalization
  double pose_delta_exit = 1e-6;
  double merge_tol = 0.05;  // RMS displacement below which two part hypotheses
                            // count as the same rigid motion (scene units)

  void validate(int scan_count) const {
    sync.validate();
    frontend.validate();
    require(iterations >= 1, ErrorCode::InvalidConfig, "iterations must be >= 1");
    require(std::isfinite(alpha) && alpha > 0 && alpha < 1, ErrorCode::InvalidConfig,
            "alpha must lie in (0, 1)");
    require(canonical_scan >= 0 && canonical_scan < scan_count, ErrorCode::InvalidConfig,
            "canonical_scan out of range");
    require(parts_override >= 0, ErrorCode::InvalidConfig, "parts_override must be >= 0");
    require(std::isfinite(merge_tol) && merge_tol > 0, ErrorCode::InvalidConfig,
            "merge_tol must be positive");
  }
};

}  // namespace rigidsync
