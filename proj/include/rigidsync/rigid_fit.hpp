#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rigidsync/kabsch.hpp"
#include "rigidsync/perm_sync.hpp"
#include "rigidsync/seg_sync.hpp"
#include "rigidsync/types.hpp"

namespace rigidsync {

// One pose per (scan, part), each mapping canonical-scan coordinates of that
// part into the given scan.  Kabsch weights are the per-point confidences
// times the clamped raw segmentation coefficients, so crisp eigenvectors act
// like binary selectors and fuzzy rows act like soft ones.
inline PoseSet per_part_poses(const ScanSet& scans, const PairTable<FlowField>& synced_flows,
                              const PairTable<ConfidenceField>& confidences,
                              const AbsoluteSegmentation& seg, int canonical) {
  scans.validate();
  const int k = scans.scan_count();
  const int n = scans.points_per_scan();
  require(canonical >= 0 && canonical < k, ErrorCode::InvalidConfig,
          "canonical scan index out of range");
  require(seg.gamma_raw.rows() == static_cast<Eigen::Index>(k) * n && seg.parts >= 1,
          ErrorCode::ShapeMismatch, "segmentation does not cover all scans");
  require(synced_flows.scan_count() == k && confidences.scan_count() == k,
          ErrorCode::ShapeMismatch, "flow and confidence tables must cover all scans");

  PoseSet out;
  out.canonical_scan = canonical;
  out.poses.assign(static_cast<size_t>(k),
                   std::vector<RigidTransform>(static_cast<size_t>(seg.parts)));
  out.status.assign(static_cast<size_t>(k),
                    std::vector<PoseSet::FitStatus>(static_cast<size_t>(seg.parts),
                                                    PoseSet::FitStatus::Ok));

  const PointMatrix& base = scans.clouds[static_cast<size_t>(canonical)].points;
  for (int a = 0; a < k; ++a) {
    if (a == canonical) continue;  // poses stay exact identities
    const FlowField& flow = synced_flows.at(canonical, a);
    require(flow.vectors.rows() == n, ErrorCode::ShapeMismatch,
            "synced flow must cover the canonical scan");
    const Vec& conf = confidences.at(canonical, a).per_point;
    require(conf.size() == n, ErrorCode::ShapeMismatch,
            "confidence must cover the canonical scan");
    const PointMatrix dst = base + flow.vectors;
    for (int s = 0; s < seg.parts; ++s) {
      Vec w(n);
      for (int i = 0; i < n; ++i) {
        const double member =
            std::max(seg.gamma_raw(static_cast<Eigen::Index>(canonical) * n + i, s), 0.0);
        w(i) = conf(i) * member;
      }
      if (w.sum() < 3.0) {
        out.status[static_cast<size_t>(a)][static_cast<size_t>(s)] =
            PoseSet::FitStatus::EmptyPart;
        continue;  // pose stays identity
      }
      const KabschResult fit = weighted_kabsch(base, dst, w);
      out.poses[static_cast<size_t>(a)][static_cast<size_t>(s)] = fit.transform;
      if (fit.degenerate)
        out.status[static_cast<size_t>(a)][static_cast<size_t>(s)] =
            PoseSet::FitStatus::Degenerate;
    }
  }
  return out;
}

// Flow implied by the fitted poses: each scan-k point moves through its
// part's pose chain into scan l.
inline FlowField rigid_flow(const PoseSet& poses, const AbsoluteSegmentation& seg,
                            const ScanSet& scans, int k, int l) {
  scans.validate();
  const int scan_count = scans.scan_count();
  const int n = scans.points_per_scan();
  require(k >= 0 && k < scan_count && l >= 0 && l < scan_count && k != l,
          ErrorCode::ShapeMismatch, "scan indices out of range");
  require(poses.scan_count() == scan_count && poses.part_count() == seg.parts,
          ErrorCode::ShapeMismatch, "pose table does not match the segmentation");
  require(seg.hard_labels.size() == static_cast<size_t>(scan_count) * n,
          ErrorCode::ShapeMismatch, "labels must cover all scans");

  FlowField out;
  out.source = k;
  out.target = l;
  out.vectors.resize(n, 3);
  const PointMatrix& pts = scans.clouds[static_cast<size_t>(k)].points;
  for (int i = 0; i < n; ++i) {
    const int s = seg.hard_labels[static_cast<size_t>(k) * n + i];
    require(s >= 0 && s < seg.parts, ErrorCode::InvalidLabels, "hard label out of range");
    const RigidTransform chain = poses.poses[static_cast<size_t>(l)][static_cast<size_t>(s)]
                                     .compose(poses.poses[static_cast<size_t>(k)][static_cast<size_t>(s)]
                                                  .inverse());
    out.vectors.row(i) = chain.apply(pts.row(i).transpose()).transpose() - pts.row(i);
  }
  return out;
}

}  // namespace rigidsync
