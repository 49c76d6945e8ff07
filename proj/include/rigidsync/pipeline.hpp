#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

#include "rigidsync/frontend.hpp"
#include "rigidsync/perm_sync.hpp"
#include "rigidsync/rigid_fit.hpp"
#include "rigidsync/seg_sync.hpp"
#include "rigidsync/types.hpp"

namespace rigidsync {

// Everything one refinement pass produced.  Flows come in three flavors:
// the composed front-end estimate, the synchronized read-out, and the final
// pose-chain reconstruction (the iteration's actual output).
struct IterationState {
  int index = 0;  // 1-based
  int estimated_parts = 1;
  PairTable<FlowField> frontend_flows;
  PairTable<ConfidenceField> frontend_confidences;  // of frontend_flows; sets pair weights
  PairTable<FlowField> synced_flows;
  PairTable<ConfidenceField> synced_confidences;    // of synced_flows; weights pose fits
  AbsoluteSegmentation seg;
  PoseSet poses;
  PairTable<FlowField> rigid_flows;
};

struct PipelineResult {
  std::vector<IterationState> iterations;

  const IterationState& final_state() const {
    require(!iterations.empty(), ErrorCode::EmptyInput, "pipeline result holds no iterations");
    return iterations.back();
  }
};

// Diagnostic / test hook: mutate the composed front-end flows of an iteration
// before confidences, synchronization, or anything else sees them.
using FlowHook = std::function<void(int iteration, PairTable<FlowField>&)>;

// Largest change between two pose sets: max over (scan, part) of the rotation
// Frobenius delta and translation delta.  Mismatched shapes compare as
// infinitely far apart.
inline double pose_delta(const PoseSet& a, const PoseSet& b) {
  if (a.scan_count() != b.scan_count() || a.part_count() != b.part_count())
    return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (int k = 0; k < a.scan_count(); ++k)
    for (int s = 0; s < a.part_count(); ++s) {
      const RigidTransform& p = a.poses[static_cast<size_t>(k)][static_cast<size_t>(s)];
      const RigidTransform& q = b.poses[static_cast<size_t>(k)][static_cast<size_t>(s)];
      worst = std::max(worst, (p.rotation - q.rotation).norm());
      worst = std::max(worst, (p.translation - q.translation).norm());
    }
  return worst;
}

namespace detail {

// The whole scene as one rigid part: used for the first iteration's global
// pre-alignment, where per-part structure is not yet known.
inline AbsoluteSegmentation single_part_segmentation(int k, int n) {
  AbsoluteSegmentation seg;
  seg.parts = 1;
  seg.gamma_raw = Mat::Ones(static_cast<Eigen::Index>(k) * n, 1);
  seg.fuzzy = Mat::Ones(static_cast<Eigen::Index>(k) * n, 1);
  seg.hard_labels.assign(static_cast<size_t>(k) * n, 0);
  seg.eigenvalues = Vec::Constant(1, static_cast<double>(k) * n);
  return seg;
}

// Binary segmentation built from explicit labels; pose-fitting scaffold for
// the consensus step below.
inline AbsoluteSegmentation indicator_segmentation(const std::vector<int>& labels, int parts) {
  AbsoluteSegmentation seg;
  seg.parts = parts;
  const Eigen::Index rows = static_cast<Eigen::Index>(labels.size());
  seg.gamma_raw = Mat::Zero(rows, parts);
  for (Eigen::Index i = 0; i < rows; ++i)
    seg.gamma_raw(i, labels[static_cast<size_t>(i)]) = 1.0;
  seg.fuzzy = seg.gamma_raw;
  seg.hard_labels = labels;
  seg.eigenvalues = Vec::Ones(parts);
  return seg;
}

// RMS disagreement between two rigid motions over a probe point set.
inline double action_distance(const RigidTransform& a, const RigidTransform& b,
                              const std::vector<Vec3>& probe) {
  if (probe.empty()) return std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (const Vec3& x : probe) acc += (a.apply(x) - b.apply(x)).squaredNorm();
  return std::sqrt(acc / static_cast<double>(probe.size()));
}

// The spectral count rule reads essentially binary co-membership matrices:
// its threshold sits at a fraction of a percent of the spectrum head, far
// below the structured mid-range tail that kernel values pick up wherever a
// local-fit neighborhood straddles a part boundary.  So crispen before
// counting.  Motion hypotheses are gathered from the previous iteration's
// parts (so converged poses are never forgotten and part indices stay stable)
// plus fresh fragments from an over-segmentation at the count rule's
// ten-eigenvalue horizon.  Hypotheses whose motions act identically merge;
// every point then joins the hypothesis that best lands it on the other
// clouds — judged against the scan geometry itself, not against the current
// flow guesses, which early iterations cannot trust.  A second round repeats
// the merge and assignment with poses refit from the first round's cleaner
// memberships.  Only the resulting binary co-membership matrix is handed to
// the count rule.
inline AbsoluteSegmentation consensus_segmentation(const ScanSet& scans,
                                                   const PairTable<FlowField>& flows,
                                                   const PairTable<ConfidenceField>& confs,
                                                   const StackedSegmentation& stacked,
                                                   const IterationState& prev,
                                                   const PipelineConfig& cfg) {
  const int k = stacked.scans;
  const int n = stacked.points;
  const int canonical = cfg.canonical_scan;
  const double inf = std::numeric_limits<double>::infinity();

  // One motion hypothesis: a pose per scan (identity at the canonical scan),
  // a per-scan usability flag, and the canonical-scan points it claims.
  struct Hypothesis {
    std::vector<RigidTransform> pose;
    std::vector<char> usable;
    std::vector<Vec3> members;
  };

  // Trimmed weighted fit of one member set against one scan: fit, drop the
  // worst-residual tail, refit.  The flows stay fixed throughout — this is
  // robust averaging over given correspondences, not re-matching — and it is
  // what lets a fragment polluted by a few cross-part members still land a
  // pose near its majority motion instead of a useless compromise.
  const PointMatrix& cbase = scans.clouds[static_cast<size_t>(canonical)].points;
  const auto trimmed_pose = [&](const std::vector<int>& idx, int a, RigidTransform& pose) {
    const FlowField& flow = flows.at(canonical, a);
    const Vec& conf = confs.at(canonical, a).per_point;
    std::vector<int> live = idx;
    for (int pass = 0; pass < 3; ++pass) {
      const int m = static_cast<int>(live.size());
      if (m < 3) return false;
      PointMatrix src(m, 3), dst(m, 3);
      Vec w(m);
      for (int r = 0; r < m; ++r) {
        const int i = live[static_cast<size_t>(r)];
        src.row(r) = cbase.row(i);
        dst.row(r) = cbase.row(i) + flow.vectors.row(i);
        w(r) = conf(i);
      }
      if (w.sum() < 1.0) return false;
      const KabschResult fit = weighted_kabsch(src, dst, w);
      if (fit.degenerate) return false;
      pose = fit.transform;
      const int keep = std::max(3, static_cast<int>(std::ceil(0.6 * m)));
      if (pass == 2 || keep >= m) break;
      std::vector<std::pair<double, int>> scored(static_cast<size_t>(m));
      for (int r = 0; r < m; ++r)
        scored[static_cast<size_t>(r)] = {
            (fit.transform.apply(src.row(r).transpose()) - dst.row(r).transpose()).squaredNorm(),
            live[static_cast<size_t>(r)]};
      std::sort(scored.begin(), scored.end());  // residual, then index: deterministic
      live.clear();
      for (int r = 0; r < keep; ++r) live.push_back(scored[static_cast<size_t>(r)].second);
      std::sort(live.begin(), live.end());
    }
    return true;
  };

  const auto pool_from = [&](const std::vector<int>& labels, int parts) {
    std::vector<Hypothesis> pool(static_cast<size_t>(parts));
    for (int g = 0; g < parts; ++g) {
      Hypothesis& h = pool[static_cast<size_t>(g)];
      h.pose.resize(static_cast<size_t>(k));
      h.usable.assign(static_cast<size_t>(k), 0);
      std::vector<int> idx;
      for (int i = 0; i < n; ++i)
        if (labels[static_cast<size_t>(canonical) * n + i] == g) {
          idx.push_back(i);
          h.members.push_back(cbase.row(i).transpose());
        }
      for (int a = 0; a < k; ++a)
        h.usable[static_cast<size_t>(a)] =
            (a == canonical) ? 1 : (trimmed_pose(idx, a, h.pose[static_cast<size_t>(a)]) ? 1 : 0);
    }
    return pool;
  };

  // Always fragment at the count rule's ten-eigenvalue horizon: the kernel
  // spectrum under- or over-counts depending on motion scale, and surplus
  // fragments are cheap — they merge or dissolve below.  Fragment motions are
  // fit from hard members only; fuzzy weights would hand every near-empty
  // fragment a phantom whole-scene compromise pose, and those all look alike —
  // they bridge genuinely distinct motions at the merge step.
  const int over = std::min(10, k * n);
  const AbsoluteSegmentation fragments = synchronize_segmentation(stacked, over);
  std::vector<Hypothesis> pool = pool_from(fragments.hard_labels, fragments.parts);
  {
    // Previous parts go first so their groups keep their indices (and with
    // them the pose gauge) whenever they survive.  Their motions are refit
    // from the current flows — this iteration's estimates are sharper than the
    // poses the labels were born with.
    std::vector<Hypothesis> seeded = pool_from(prev.seg.hard_labels, prev.seg.parts);
    seeded.insert(seeded.end(), pool.begin(), pool.end());
    pool = std::move(seeded);
  }
  {
    // Spatially local patches round out the pool.  When motions are small the
    // consistency kernel washes out and its fragments carry no part structure,
    // but parts occupy disjoint regions, so compact neighborhoods are almost
    // always single-part and their trimmed fits land real motions.  Seeds come
    // from farthest-point traversal of the canonical cloud (start at index 0,
    // ties to the lowest index) so coverage is even and deterministic.
    const int patch_count = std::min(10, n / 4);
    const int patch_size = std::max(4, std::min(8, n / 8));
    std::vector<int> seeds;
    if (patch_count > 0) {
      std::vector<double> dist(static_cast<size_t>(n),
                               std::numeric_limits<double>::infinity());
      int next = 0;
      for (int s = 0; s < patch_count; ++s) {
        seeds.push_back(next);
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          dist[static_cast<size_t>(i)] = std::min(
              dist[static_cast<size_t>(i)],
              (cbase.row(i) - cbase.row(next)).squaredNorm());
          if (dist[static_cast<size_t>(i)] > far_d) {
            far_d = dist[static_cast<size_t>(i)];
            far = i;
          }
        }
        next = far;
      }
    }
    for (const int seed : seeds) {
      std::vector<std::pair<double, int>> near(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i)
        near[static_cast<size_t>(i)] = {(cbase.row(i) - cbase.row(seed)).squaredNorm(), i};
      std::sort(near.begin(), near.end());
      std::vector<int> idx;
      for (int r = 0; r < patch_size && r < n; ++r)
        idx.push_back(near[static_cast<size_t>(r)].second);
      std::sort(idx.begin(), idx.end());
      Hypothesis h;
      h.pose.resize(static_cast<size_t>(k));
      h.usable.assign(static_cast<size_t>(k), 0);
      for (const int i : idx) h.members.push_back(cbase.row(i).transpose());
      for (int a = 0; a < k; ++a)
        h.usable[static_cast<size_t>(a)] =
            (a == canonical) ? 1 : (trimmed_pose(idx, a, h.pose[static_cast<size_t>(a)]) ? 1 : 0);
      pool.push_back(std::move(h));
    }
  }

  std::vector<int> cur(static_cast<size_t>(k) * n, 0);
  int kept = 1;
  for (int round = 0; round < 2; ++round) {
    const int total = static_cast<int>(pool.size());

    // Pairwise hypothesis agreement: the worst action disagreement on the two
    // member sets across comparable scans.  Values at or above the merge
    // tolerance are all equivalent, so the scan loop stops early at infinity;
    // hypotheses with no comparable scan (or no members) never merge.
    Mat pairD = Mat::Constant(total, total, inf);
    for (int u = 0; u < total; ++u)
      for (int v = u + 1; v < total; ++v) {
        std::vector<Vec3> probe = pool[static_cast<size_t>(u)].members;
        probe.insert(probe.end(), pool[static_cast<size_t>(v)].members.begin(),
                     pool[static_cast<size_t>(v)].members.end());
        double worst = 0.0;
        bool comparable = false;
        for (int a = 0; a < k; ++a) {
          if (a == canonical) continue;  // canonical poses are identities on both sides
          if (!pool[static_cast<size_t>(u)].usable[static_cast<size_t>(a)] ||
              !pool[static_cast<size_t>(v)].usable[static_cast<size_t>(a)])
            continue;
          comparable = true;
          worst = std::max(worst, action_distance(pool[static_cast<size_t>(u)].pose[static_cast<size_t>(a)],
                                                  pool[static_cast<size_t>(v)].pose[static_cast<size_t>(a)],
                                                  probe));
          if (worst >= cfg.merge_tol) {
            comparable = false;
            break;
          }
        }
        if (comparable) {
          pairD(u, v) = worst;
          pairD(v, u) = worst;
        }
      }

    // Complete-linkage agglomeration: two clusters fuse only when every cross
    // pair of their member hypotheses agrees.  Single linkage would chain
    // distinct motions together through in-between compromise fits.
    std::vector<std::vector<int>> clusters(static_cast<size_t>(total));
    for (int g = 0; g < total; ++g) clusters[static_cast<size_t>(g)] = {g};
    for (;;) {
      int bu = -1, bv = -1;
      double best = cfg.merge_tol;
      for (size_t ci = 0; ci < clusters.size(); ++ci)
        for (size_t cj = ci + 1; cj < clusters.size(); ++cj) {
          double d = 0.0;
          for (const int a : clusters[ci])
            for (const int b : clusters[cj]) d = std::max(d, pairD(a, b));
          if (d < best) {
            best = d;
            bu = static_cast<int>(ci);
            bv = static_cast<int>(cj);
          }
        }
      if (bu < 0) break;
      clusters[static_cast<size_t>(bu)].insert(clusters[static_cast<size_t>(bu)].end(),
                                               clusters[static_cast<size_t>(bv)].begin(),
                                               clusters[static_cast<size_t>(bv)].end());
      std::sort(clusters[static_cast<size_t>(bu)].begin(), clusters[static_cast<size_t>(bu)].end());
      clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bv));
    }

    // Each merged group acts through its lowest-index member usable per scan.
    const int groups = static_cast<int>(clusters.size());
    std::vector<std::vector<const RigidTransform*>> gpose(
        static_cast<size_t>(k),
        std::vector<const RigidTransform*>(static_cast<size_t>(groups), nullptr));
    for (int a = 0; a < k; ++a)
      for (int grp = 0; grp < groups; ++grp)
        for (const int g : clusters[static_cast<size_t>(grp)])
          if (pool[static_cast<size_t>(g)].usable[static_cast<size_t>(a)]) {
            gpose[static_cast<size_t>(a)][static_cast<size_t>(grp)] =
                &pool[static_cast<size_t>(g)].pose[static_cast<size_t>(a)];
            break;
          }

    // Geometric residual of point (a, i) under group grp: where the group's
    // motion chains land the point relative to the other clouds.  This
    // deliberately ignores the flow estimates; on clean scans the right
    // hypothesis snaps the point onto true partners exactly.
    std::vector<double> cache(static_cast<size_t>(k) * n * groups, inf);
    for (int a = 0; a < k; ++a)
      for (int i = 0; i < n; ++i) {
        const Vec3 x = scans.clouds[static_cast<size_t>(a)].points.row(i).transpose();
        for (int grp = 0; grp < groups; ++grp) {
          if (gpose[static_cast<size_t>(a)][static_cast<size_t>(grp)] == nullptr) continue;
          double acc = 0.0;
          int cnt = 0;
          for (int b = 0; b < k; ++b) {
            if (b == a || gpose[static_cast<size_t>(b)][static_cast<size_t>(grp)] == nullptr)
              continue;
            const RigidTransform chain =
                gpose[static_cast<size_t>(b)][static_cast<size_t>(grp)]->compose(
                    gpose[static_cast<size_t>(a)][static_cast<size_t>(grp)]->inverse());
            const Vec3 landed = chain.apply(x);
            const PointMatrix& cloud = scans.clouds[static_cast<size_t>(b)].points;
            double best = inf;
            for (int j = 0; j < n; ++j)
              best = std::min(best, (cloud.row(j).transpose() - landed).squaredNorm());
            acc += best;
            ++cnt;
          }
          if (cnt > 0)
            cache[(static_cast<size_t>(a) * n + i) * groups + grp] =
                acc / static_cast<double>(cnt);
        }
      }

    // Assign every point to the earliest group within a slack of its best
    // residual; groups that cannot keep three points in every scan are not
    // fittable and dissolve, their points joining the survivors.  The slack —
    // the median of per-point best residuals — is a parsimony pressure: under
    // noise every hypothesis scores around the noise floor, and without the
    // slack each overfit patch motion keeps the handful of points it happens
    // to score best on, shattering a part into micro-groups.  On clean scans
    // near convergence the median collapses toward zero and the rule reduces
    // to a plain argmin with pool-order ties, which favors established parts.
    std::vector<char> alive(static_cast<size_t>(groups), 1);
    for (int pass = 0; pass < groups + 1; ++pass) {
      std::vector<double> floors(static_cast<size_t>(k) * n, inf);
      for (int a = 0; a < k; ++a)
        for (int i = 0; i < n; ++i) {
          double best_r = inf;
          for (int grp = 0; grp < groups; ++grp) {
            if (!alive[static_cast<size_t>(grp)]) continue;
            best_r = std::min(best_r, cache[(static_cast<size_t>(a) * n + i) * groups + grp]);
          }
          floors[static_cast<size_t>(a) * n + i] = best_r;
        }
      std::vector<double> finite;
      finite.reserve(floors.size());
      for (const double r : floors)
        if (r < inf) finite.push_back(r);
      double slack = 0.0;
      if (!finite.empty()) {
        std::sort(finite.begin(), finite.end());
        slack = finite[(finite.size() - 1) / 2];
      }
      for (int a = 0; a < k; ++a)
        for (int i = 0; i < n; ++i) {
          const double best_r = floors[static_cast<size_t>(a) * n + i];
          int pick = -1;
          if (best_r < inf) {
            for (int grp = 0; grp < groups; ++grp) {
              if (!alive[static_cast<size_t>(grp)]) continue;
              if (cache[(static_cast<size_t>(a) * n + i) * groups + grp] <= best_r + slack) {
                pick = grp;
                break;
              }
            }
          }
          cur[static_cast<size_t>(a) * n + i] = pick;  // -1 only if nothing usable
        }
      std::vector<std::vector<int>> counts(static_cast<size_t>(groups),
                                           std::vector<int>(static_cast<size_t>(k), 0));
      for (int a = 0; a < k; ++a)
        for (int i = 0; i < n; ++i) {
          const int g = cur[static_cast<size_t>(a) * n + i];
          if (g >= 0) ++counts[static_cast<size_t>(g)][static_cast<size_t>(a)];
        }
      bool dissolved = false;
      int survivors = 0;
      for (int grp = 0; grp < groups; ++grp) {
        if (!alive[static_cast<size_t>(grp)]) continue;
        if (*std::min_element(counts[static_cast<size_t>(grp)].begin(),
                              counts[static_cast<size_t>(grp)].end()) < 3) {
          alive[static_cast<size_t>(grp)] = 0;
          dissolved = true;
        } else {
          ++survivors;
        }
      }
      if (survivors == 0) {
        std::fill(cur.begin(), cur.end(), 0);
        alive.assign(static_cast<size_t>(groups), 0);
        if (!alive.empty()) alive[0] = 1;
        break;
      }
      if (!dissolved) break;
    }
    // Compact the surviving group ids in stable order.
    std::vector<int> remap(static_cast<size_t>(groups), -1);
    kept = 0;
    for (int grp = 0; grp < groups; ++grp)
      if (alive[static_cast<size_t>(grp)]) remap[static_cast<size_t>(grp)] = kept++;
    for (int& lab : cur) lab = lab >= 0 ? remap[static_cast<size_t>(lab)] : 0;
    if (kept == 0) kept = 1;

    if (round == 0) pool = pool_from(cur, kept);
  }

  // Binary co-membership of the consensus labels: the regime the count rule
  // is calibrated for.
  PairTable<Mat> crisp_blocks(k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      Mat z(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          z(i, j) =
              cur[static_cast<size_t>(a) * n + i] == cur[static_cast<size_t>(b) * n + j] ? 1.0
                                                                                         : 0.0;
      if (!cfg.unnormalized_z) {
        RelativeSegmentation rel;
        rel.source = a;
        rel.target = b;
        rel.zhat = std::move(z);
        z = normalize_relative(rel).zhat;
      }
      crisp_blocks.at(a, b) = std::move(z);
    }
  const StackedSegmentation crisp = build_stacked(crisp_blocks, n);
  return synchronize_segmentation(crisp, estimate_part_count(crisp, cfg.alpha));
}

// One full pass: compose flows on pre-aligned clouds, synchronize
// correspondences, synchronize segmentation, fit poses.  `prev` is null for
// the first iteration.
inline IterationState advance(const ScanSet& scans, const PipelineConfig& cfg,
                              const IterationState* prev, int index, const FlowHook& hook) {
  const int k = scans.scan_count();
  const int n = scans.points_per_scan();

  IterationState state;
  state.index = index;

  // Pre-align every scan into the canonical frame using the previous poses
  // and labels.  The first iteration has nothing to go on and works on the
  // clouds as they are.
  std::vector<PointCloud> warped(scans.clouds);
  if (prev) {
    for (int a = 0; a < k; ++a) {
      std::vector<RigidTransform> inverse(static_cast<size_t>(prev->seg.parts));
      for (int s = 0; s < prev->seg.parts; ++s)
        inverse[static_cast<size_t>(s)] =
            prev->poses.poses[static_cast<size_t>(a)][static_cast<size_t>(s)].inverse();
      for (int i = 0; i < n; ++i) {
        const int s = prev->seg.hard_labels[static_cast<size_t>(a) * n + i];
        warped[static_cast<size_t>(a)].points.row(i) =
            inverse[static_cast<size_t>(s)]
                .apply(scans.clouds[static_cast<size_t>(a)].points.row(i).transpose())
                .transpose();
      }
    }
  }

  // Residual nearest-neighbor flow between pre-aligned clouds, mapped back
  // into the original frames through the source point's part pose.  When the
  // previous estimate was right, the landing point is exact no matter how
  // large the motions are; pose errors only affect which neighbor is hit.
  state.frontend_flows = PairTable<FlowField>(k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      const FlowField residual =
          nn_flow(warped[static_cast<size_t>(a)], warped[static_cast<size_t>(b)]);
      FlowField& total = state.frontend_flows.at(a, b);
      total.source = a;
      total.target = b;
      if (!prev) {
        total.vectors = residual.vectors;
        continue;
      }
      total.vectors.resize(n, 3);
      for (int i = 0; i < n; ++i) {
        const int s = prev->seg.hard_labels[static_cast<size_t>(a) * n + i];
        const Vec3 landed = prev->poses.poses[static_cast<size_t>(b)][static_cast<size_t>(s)]
                                .apply(warped[static_cast<size_t>(a)].points.row(i).transpose() +
                                       residual.vectors.row(i).transpose());
        total.vectors.row(i) =
            landed.transpose() - scans.clouds[static_cast<size_t>(a)].points.row(i);
      }
    }
  if (hook) hook(index, state.frontend_flows);

  state.frontend_confidences = PairTable<ConfidenceField>(k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b)
        state.frontend_confidences.at(a, b) =
            flow_confidence(scans.clouds[static_cast<size_t>(a)],
                            scans.clouds[static_cast<size_t>(b)],
                            state.frontend_flows.at(a, b), cfg.frontend);

  // Correspondence synchronization.  A pair is only as reliable as its worse
  // direction, so the symmetric pair weight is the min of the two means; a
  // corrupted pair whose confidence underflows drops out of the graph
  // entirely (and disconnecting the graph is an error).
  state.synced_flows = PairTable<FlowField>(k);
  if (cfg.no_sync) {
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        if (a != b) state.synced_flows.at(a, b) = state.frontend_flows.at(a, b);
    state.synced_confidences = state.frontend_confidences;
  } else {
    PairTable<Mat> assignments(k);
    PairTable<double> weights(k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        if (a == b) continue;
        assignments.at(a, b) =
            soft_assignment_from_flow(scans.clouds[static_cast<size_t>(a)],
                                      scans.clouds[static_cast<size_t>(b)],
                                      state.frontend_flows.at(a, b), cfg.sync)
                .matrix;
        if (a < b) {
          const double w = cfg.unweighted
                               ? 1.0
                               : std::min(state.frontend_confidences.at(a, b).pair_weight,
                                          state.frontend_confidences.at(b, a).pair_weight);
          weights.at(a, b) = w;
          weights.at(b, a) = w;
        }
      }
    const SyncedCorrespondences synced =
        synchronize_permutations(build_weighted_gcl(assignments, weights, n), k, n);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        if (a != b)
          state.synced_flows.at(a, b) =
              induced_flow(synced.blocks.at(a, b), scans.clouds[static_cast<size_t>(a)],
                           scans.clouds[static_cast<size_t>(b)], cfg.sync);

    state.synced_confidences = PairTable<ConfidenceField>(k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        if (a != b)
          state.synced_confidences.at(a, b) =
              flow_confidence(scans.clouds[static_cast<size_t>(a)],
                              scans.clouds[static_cast<size_t>(b)],
                              state.synced_flows.at(a, b), cfg.frontend);
  }

  // Segmentation synchronization.  The first iteration treats the scene as a
  // single rigid body; later ones compare local motions across every pair.
  if (!prev) {
    state.seg = single_part_segmentation(k, n);
  } else {
    PairTable<Mat> zblocks(k);
    std::vector<std::vector<bool>> edge(static_cast<size_t>(k),
                                        std::vector<bool>(static_cast<size_t>(k), false));
    for (int a = 0; a < k; ++a) {
      const std::vector<std::vector<int>> neighborhoods =
          knn_indices(scans.clouds[static_cast<size_t>(a)].points, cfg.frontend.knn);
      for (int b = 0; b < k; ++b) {
        if (a == b) continue;
        const LocalTransformField ltf = local_rigid_transforms(
            scans.clouds[static_cast<size_t>(a)], scans.clouds[static_cast<size_t>(b)],
            state.synced_flows.at(a, b), cfg.frontend, neighborhoods,
            state.synced_confidences.at(a, b).per_point);
        RelativeSegmentation z = relative_segmentation(
            residual_beta(ltf, scans.clouds[static_cast<size_t>(b)], state.synced_flows.at(b, a)),
            cfg.frontend);
        if (!cfg.unnormalized_z) {
          try {
            z = normalize_relative(z);
          } catch (const Error& e) {
            if (e.code() == ErrorCode::AllZero) continue;  // pair carries no signal: drop it
            throw;
          }
        }
        zblocks.at(a, b) = z.zhat;
        edge[static_cast<size_t>(a)][static_cast<size_t>(b)] = true;
      }
    }
    require(pairs_connected(edge, k), ErrorCode::DisconnectedGraph,
            "surviving segmentation pairs do not connect all scans");
    // Fully dropped pairs contribute a neutral all-zero block.
    for (int a = 0; a < k; ++a)
      for (int b = a + 1; b < k; ++b)
        if (!edge[static_cast<size_t>(a)][static_cast<size_t>(b)] &&
            !edge[static_cast<size_t>(b)][static_cast<size_t>(a)])
          zblocks.at(a, b) = Mat::Zero(n, n);

    const StackedSegmentation stacked = build_stacked(zblocks, n);
    if (cfg.parts_override > 0) {
      state.seg = synchronize_segmentation(stacked, std::min(cfg.parts_override, k * n));
    } else {
      state.seg = consensus_segmentation(scans, state.synced_flows, state.synced_confidences,
                                         stacked, *prev, cfg);
    }
  }
  state.estimated_parts = state.seg.parts;

  state.poses =
      per_part_poses(scans, state.synced_flows, state.synced_confidences, state.seg,
                     cfg.canonical_scan);

  state.rigid_flows = PairTable<FlowField>(k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b) state.rigid_flows.at(a, b) = rigid_flow(state.poses, state.seg, scans, a, b);
  return state;
}

}  // namespace detail

// Append one refinement pass to an existing result.
inline PipelineResult refine_iteration(const PipelineResult& result, const ScanSet& scans,
                                       const PipelineConfig& cfg, const FlowHook& hook = {}) {
  scans.validate();
  cfg.validate(scans.scan_count());
  require(!result.iterations.empty(), ErrorCode::EmptyInput,
          "refinement needs at least one completed iteration");
  PipelineResult out = result;
  out.iterations.push_back(detail::advance(scans, cfg, &out.iterations.back(),
                                           out.iterations.back().index + 1, hook));
  return out;
}

// Full pipeline: global pre-alignment first, then refinement passes, with an
// early exit once the part count and the poses stop moving.
inline PipelineResult run_pipeline(const ScanSet& scans, const PipelineConfig& cfg,
                                   const FlowHook& hook = {}) {
  scans.validate();
  cfg.validate(scans.scan_count());

  PipelineResult out;
  for (int t = 1; t <= cfg.iterations; ++t) {
    const IterationState* prev = out.iterations.empty() ? nullptr : &out.iterations.back();
    IterationState next = detail::advance(scans, cfg, prev, t, hook);
    const bool settled = prev && next.estimated_parts == prev->estimated_parts &&
                         pose_delta(prev->poses, next.poses) < cfg.pose_delta_exit;
    out.iterations.push_back(std::move(next));
    if (settled) break;
  }
  return out;
}

}  // namespace rigidsync
