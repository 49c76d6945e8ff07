#pragma once

#include "rigidsync/rng.hpp"
#include "rigidsync/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace rigidsync {

// ---------------------------------------------------------------------------
// Synthetic multi-body scenes: S rigid parts sampled on primitive surfaces,
// observed by K scans, each scan applying an independent random rigid motion
// to every part.  Ground truth (labels, poses, flows, correspondences) is
// recorded so synchronization results can be scored exactly.

enum class Primitive { Box, Cylinder, Sphere };

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Box: return "box";
    case Primitive::Cylinder: return "cylinder";
    case Primitive::Sphere: return "sphere";
  }
  return "box";
}

inline Primitive primitive_from_name(const std::string& name) {
  if (name == "box") return Primitive::Box;
  if (name == "cylinder") return Primitive::Cylinder;
  if (name == "sphere") return Primitive::Sphere;
  fail(ErrorCode::ParseError, "unknown primitive '" + name + "'");
}

struct SceneConfig {
  int scans = 2;      // K
  int points = 256;   // N, per scan
  int parts = 1;      // S

  // Fraction of N given to each part; empty means an equal split.  Sizes are
  // rounded with largest remainders so they always sum to N exactly.
  std::vector<double> part_fractions;

  // Cycled across parts; empty means box / cylinder / sphere / box / ...
  std::vector<Primitive> primitives;

  double max_rotation = 0.7853981633974483;  // pi/4, radians
  double max_translation = 0.3;              // scene units (unit-diameter scene)
  double noise_sigma = 0.0;                  // isotropic, added after ground truth
  bool shuffle = true;                       // independent point order per scan
  uint64_t seed = 0;

  void validate() const {
    require(scans >= 2, ErrorCode::InvalidConfig, "need at least 2 scans");
    require(parts >= 1, ErrorCode::InvalidConfig, "need at least 1 part");
    require(points >= 4 * parts, ErrorCode::InvalidConfig, "need at least 4 points per part");
    if (!part_fractions.empty()) {
      require(static_cast<int>(part_fractions.size()) == parts, ErrorCode::InvalidConfig,
              "part_fractions must have one entry per part");
      double sum = 0.0;
      for (double f : part_fractions) {
        require(std::isfinite(f) && f > 0, ErrorCode::InvalidConfig,
                "part fractions must be positive");
        sum += f;
      }
      require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::InvalidConfig,
              "part fractions must sum to 1");
    }
    require(std::isfinite(max_rotation) && max_rotation >= 0, ErrorCode::InvalidConfig,
            "max_rotation must be >= 0");
    require(std::isfinite(max_translation) && max_translation >= 0, ErrorCode::InvalidConfig,
            "max_translation must be >= 0");
    require(std::isfinite(noise_sigma) && noise_sigma >= 0, ErrorCode::InvalidConfig,
            "noise_sigma must be >= 0");
  }
};

struct SceneBundle {
  SceneConfig config;
  ScanSet scans;

  std::vector<int> part_sizes;            // per part, sums to N
  std::vector<int> gt_labels;             // scan-major, one per delivered point
  PoseSet gt_poses;                       // relative to scan 0 (exact identities there)
  PairTable<FlowField> gt_flows;          // every ordered scan pair
  std::vector<std::vector<int>> gt_correspondences;  // [scan][i] = reference index
};

namespace detail {

// Largest-remainder rounding of fractions * n; ties go to the lower index.
inline std::vector<int> split_points(int n, int parts, const std::vector<double>& fractions) {
  std::vector<double> frac = fractions;
  if (frac.empty()) frac.assign(parts, 1.0 / parts);
  std::vector<int> sizes(parts);
  std::vector<std::pair<double, int>> rem(parts);
  int used = 0;
  for (int s = 0; s < parts; ++s) {
    const double quota = frac[s] * n;
    sizes[s] = static_cast<int>(std::floor(quota));
    rem[s] = {quota - sizes[s], s};
    used += sizes[s];
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < n - used; ++i) ++sizes[rem[static_cast<size_t>(i)].second];
  for (int s = 0; s < parts; ++s)
    require(sizes[s] >= 1, ErrorCode::InvalidConfig, "a part fraction rounds to zero points");
  return sizes;
}

// Surface area of a canonical primitive, for matching sampling density
// across parts of different sizes.
inline double surface_area(Primitive prim) {
  switch (prim) {
    case Primitive::Box: {
      const double hx = 0.5, hy = 0.35, hz = 0.25;
      return 8.0 * (hy * hz + hx * hz + hx * hy);
    }
    case Primitive::Cylinder: {
      const double r = 0.4, h = 0.5;
      return 2.0 * 6.283185307179586 * r * h + 2.0 * 3.141592653589793 * r * r;
    }
    case Primitive::Sphere:
      return 4.0 * 3.141592653589793 * 0.5 * 0.5;
  }
  return 1.0;
}

// Circumradius of a canonical primitive, for laying parts out without overlap.
inline double circumradius(Primitive prim) {
  switch (prim) {
    case Primitive::Box: return std::sqrt(0.5 * 0.5 + 0.35 * 0.35 + 0.25 * 0.25);
    case Primitive::Cylinder: return std::sqrt(0.4 * 0.4 + 0.5 * 0.5);
    case Primitive::Sphere: return 0.5;
  }
  return 1.0;
}

// One point on the surface of a canonical primitive (extent roughly 1),
// from exactly three uniforms so the draw budget per point is fixed.
inline Vec3 surface_point(Primitive prim, double u1, double u2, double u3) {
  switch (prim) {
    case Primitive::Box: {
      // Half extents; faces picked proportionally to their area.
      const double hx = 0.5, hy = 0.35, hz = 0.25;
      const double ax = hy * hz, ay = hx * hz, az = hx * hy;  // per +/- face
      const double pick = u1 * 2.0 * (ax + ay + az);
      const double a = (2.0 * u2 - 1.0), b = (2.0 * u3 - 1.0);
      if (pick < 2.0 * ax) return {pick < ax ? hx : -hx, a * hy, b * hz};
      if (pick < 2.0 * (ax + ay)) return {a * hx, pick < 2.0 * ax + ay ? hy : -hy, b * hz};
      return {a * hx, b * hy, pick < 2.0 * (ax + ay) + az ? hz : -hz};
    }
    case Primitive::Cylinder: {
      const double r = 0.4, h = 0.5;  // half height
      const double lateral = 2.0 * 6.283185307179586 * r * h;
      const double cap = 3.141592653589793 * r * r;
      const double pick = u1 * (lateral + 2.0 * cap);
      const double theta = 6.283185307179586 * u2;
      if (pick < lateral) return {r * std::cos(theta), r * std::sin(theta), (2.0 * u3 - 1.0) * h};
      const double rho = r * std::sqrt(u3);
      return {rho * std::cos(theta), rho * std::sin(theta), pick < lateral + cap ? h : -h};
    }
    case Primitive::Sphere: {
      const double r = 0.5;
      const double z = 2.0 * u2 - 1.0;
      const double ring = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double theta = 6.283185307179586 * u3;
      return {r * ring * std::cos(theta), r * ring * std::sin(theta), r * z};
    }
  }
  return Vec3::Zero();
}

inline Vec3 sphere_direction(double u1, double u2) {
  const double z = 2.0 * u1 - 1.0;
  const double ring = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double theta = 6.283185307179586 * u2;
  return {ring * std::cos(theta), ring * std::sin(theta), z};
}

}  // namespace detail

// Deterministic scene synthesis.  All randomness comes from one SplitMix64
// stream seeded with config.seed, consumed in a fixed order:
//   1. base points: 3 uniforms per dart, part by part — darts are thrown until
//      one lands at least the current separation radius away from the part's
//      accepted points (rejected darts also consume exactly 3 uniforms);
//   2. motions: 6 uniforms per (scan, part) — rotation axis (2), angle (1),
//      translation direction (2), translation radius (1) — scan-major;
//   3. noise (only when noise_sigma > 0): 3 gaussians per point, scan-major;
//   4. shuffle (only when enabled): N-1 index draws per scan, scan-major.
// Parts are rescaled to share one sampling density and laid out on a ring, and
// each part's surface is blue-noise sampled (dart throwing) so the minimum
// point spacing stays near the mean — uniform sampling leaves arbitrarily
// tight clusters that any correspondence method resolves late or never.
// The base cloud is centered and scaled to unit diameter before any motion,
// with a hair of slack so the measured diameter never exceeds 1 in floating
// point.  Every scan, including scan 0, gets its own motions; delivered poses
// are re-referenced so scan 0 carries exact identities.
inline SceneBundle generate_scene(const SceneConfig& config) {
  config.validate();
  SplitMix64 rng(config.seed);
  const int k = config.scans;
  const int n = config.points;
  const int parts = config.parts;

  SceneBundle bundle;
  bundle.config = config;
  bundle.part_sizes = detail::split_points(n, parts, config.part_fractions);

  std::vector<Primitive> prims = config.primitives;
  if (prims.empty()) prims = {Primitive::Box, Primitive::Cylinder, Primitive::Sphere};

  // Equalize sampling density: scale every part so its surface offers the
  // same area per point as the densest canonical assignment.
  double area_budget = std::numeric_limits<double>::infinity();
  for (int s = 0; s < parts; ++s)
    area_budget = std::min(area_budget,
                           detail::surface_area(prims[static_cast<size_t>(s) % prims.size()]) /
                               bundle.part_sizes[static_cast<size_t>(s)]);
  std::vector<double> scale(static_cast<size_t>(parts));
  for (int s = 0; s < parts; ++s)
    scale[static_cast<size_t>(s)] =
        std::sqrt(area_budget * bundle.part_sizes[static_cast<size_t>(s)] /
                  detail::surface_area(prims[static_cast<size_t>(s) % prims.size()]));
  const double spacing = std::sqrt(area_budget);  // mean inter-point distance scale

  // Ring layout with a uniform hull gap of a few point spacings: compact
  // scenes keep the post-normalization point spacing workable.
  std::vector<Vec3> centers(static_cast<size_t>(parts), Vec3::Zero());
  if (parts > 1) {
    const double gap = 4.0 * spacing;
    double ring_radius = 0.0;
    const double half_angle = 3.141592653589793 / parts;
    for (int s = 0; s < parts; ++s) {
      const int t = (s + 1) % parts;
      const double need =
          scale[static_cast<size_t>(s)] *
              detail::circumradius(prims[static_cast<size_t>(s) % prims.size()]) +
          scale[static_cast<size_t>(t)] *
              detail::circumradius(prims[static_cast<size_t>(t) % prims.size()]) +
          gap;
      ring_radius = std::max(ring_radius, need / (2.0 * std::sin(half_angle)));
    }
    for (int s = 0; s < parts; ++s) {
      const double theta = 2.0 * half_angle * s;
      centers[static_cast<size_t>(s)] =
          Vec3(ring_radius * std::cos(theta), ring_radius * std::sin(theta), 0.0);
    }
  }

  // Base cloud in reference order, part 0 first.  Dart throwing: accept a
  // candidate only if it keeps the part's minimum spacing; after too many
  // rejections relax the radius so termination is guaranteed.
  PointMatrix base(n, 3);
  std::vector<int> base_label(n);
  {
    int row = 0;
    for (int s = 0; s < parts; ++s) {
      const Primitive prim = prims[static_cast<size_t>(s) % prims.size()];
      const int first = row;
      double radius = 0.7 * spacing;
      int failures = 0;
      for (int i = 0; i < bundle.part_sizes[s]; ++i, ++row) {
        for (;;) {
          const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
          const Vec3 candidate = scale[static_cast<size_t>(s)] *
                                     detail::surface_point(prim, u1, u2, u3) +
                                 centers[static_cast<size_t>(s)];
          bool clear = true;
          for (int j = first; j < row && clear; ++j)
            clear = (base.row(j).transpose() - candidate).norm() >= radius;
          if (clear) {
            base.row(row) = candidate.transpose();
            break;
          }
          if (++failures >= 40) {
            failures = 0;
            radius *= 0.85;
          }
        }
        base_label[row] = s;
      }
    }
  }

  // Center and normalize to unit diameter (exact pairwise maximum).
  base.rowwise() -= base.colwise().mean();
  double diameter = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      diameter = std::max(diameter, (base.row(i) - base.row(j)).norm());
  require(diameter > 1e-12, ErrorCode::InvalidConfig, "degenerate base cloud");
  base /= diameter * (1.0 + 1e-12);

  std::vector<Vec3> part_centroid(parts, Vec3::Zero());
  {
    int row = 0;
    for (int s = 0; s < parts; ++s) {
      for (int i = 0; i < bundle.part_sizes[s]; ++i, ++row) part_centroid[s] += base.row(row);
      part_centroid[s] /= bundle.part_sizes[s];
    }
  }

  // Raw per-scan motions; rotations act about the part centroid.
  std::vector<std::vector<RigidTransform>> raw(k, std::vector<RigidTransform>(parts));
  for (int a = 0; a < k; ++a) {
    for (int s = 0; s < parts; ++s) {
      const Vec3 axis = detail::sphere_direction(rng.uniform(), rng.uniform());
      const double angle = config.max_rotation * rng.uniform();
      const Vec3 dir = detail::sphere_direction(rng.uniform(), rng.uniform());
      const double radius = config.max_translation * std::cbrt(rng.uniform());
      RigidTransform& t = raw[a][s];
      t.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
      t.translation = part_centroid[s] - t.rotation * part_centroid[s] + radius * dir;
    }
  }

  // Clean scans in reference order.
  std::vector<PointMatrix> clean(k, PointMatrix(n, 3));
  for (int a = 0; a < k; ++a)
    for (int i = 0; i < n; ++i)
      clean[a].row(i) = raw[a][base_label[i]].apply(base.row(i).transpose()).transpose();

  // Poses relative to scan 0; the canonical slots stay bitwise identity.
  bundle.gt_poses.canonical_scan = 0;
  bundle.gt_poses.poses.assign(k, std::vector<RigidTransform>(parts));
  bundle.gt_poses.status.assign(k, std::vector<PoseSet::FitStatus>(parts, PoseSet::FitStatus::Ok));
  for (int a = 1; a < k; ++a)
    for (int s = 0; s < parts; ++s)
      bundle.gt_poses.poses[a][s] = raw[a][s].compose(raw[0][s].inverse());

  if (config.noise_sigma > 0) {
    for (int a = 0; a < k; ++a)
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) clean[a](i, c) += config.noise_sigma * rng.gaussian();
  }

  // Per-scan delivery order; gt_correspondences maps back to reference order.
  bundle.gt_correspondences.assign(k, std::vector<int>(n));
  for (int a = 0; a < k; ++a) {
    std::vector<int>& order = bundle.gt_correspondences[a];
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle)
      for (int i = n - 1; i >= 1; --i)
        std::swap(order[i], order[static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1))]);
  }

  bundle.scans.clouds.resize(k);
  bundle.gt_labels.resize(static_cast<size_t>(k) * n);
  for (int a = 0; a < k; ++a) {
    PointCloud& cloud = bundle.scans.clouds[a];
    cloud.scan_id = a;
    cloud.points.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      const int ref = bundle.gt_correspondences[a][i];
      cloud.points.row(i) = clean[a].row(ref);
      bundle.gt_labels[static_cast<size_t>(a) * n + i] = base_label[ref];
    }
  }

  // Ground-truth flows: the pose chain applied to the delivered points, so
  // x + f for pair (a, b) is exactly where scan a's point sits in scan b.
  bundle.gt_flows = PairTable<FlowField>(k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      FlowField& flow = bundle.gt_flows.at(a, b);
      flow.source = a;
      flow.target = b;
      flow.vectors.resize(n, 3);
      for (int i = 0; i < n; ++i) {
        const int s = bundle.gt_labels[static_cast<size_t>(a) * n + i];
        const RigidTransform chain =
            bundle.gt_poses.poses[b][s].compose(bundle.gt_poses.poses[a][s].inverse());
        const Vec3 x = bundle.scans.clouds[a].points.row(i).transpose();
        flow.vectors.row(i) = (chain.apply(x) - x).transpose();
      }
    }
  }
  return bundle;
}

}  // namespace rigidsync
