#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rigidsync/rigid_fit.hpp"
#include "support/oracles.hpp"

using namespace rigidsync;

namespace {

auto code_is(ErrorCode c) {
  return Catch::Matchers::Predicate<Error>([c](const Error& e) { return e.code() == c; });
}

// Hand-built K-scan piecewise-rigid scene with index-aligned correspondences.
struct PartScene {
  ScanSet scans;
  std::vector<std::vector<RigidTransform>> gt;  // [scan][part], scan 0 = identity
  std::vector<int> labels_one_scan;             // same for every scan
  int parts = 0;

  AbsoluteSegmentation segmentation() const {
    const int k = scans.scan_count();
    const int n = scans.points_per_scan();
    AbsoluteSegmentation seg;
    seg.parts = parts;
    seg.gamma_raw = Mat::Zero(k * n, parts);
    seg.fuzzy = Mat::Zero(k * n, parts);
    for (int a = 0; a < k; ++a)
      for (int i = 0; i < n; ++i) {
        seg.gamma_raw(a * n + i, labels_one_scan[static_cast<size_t>(i)]) = 1.0;
        seg.fuzzy(a * n + i, labels_one_scan[static_cast<size_t>(i)]) = 1.0;
        seg.hard_labels.push_back(labels_one_scan[static_cast<size_t>(i)]);
      }
    seg.eigenvalues = Vec::Ones(parts);
    return seg;
  }

  // Exact flows from the canonical scan to every other scan.
  PairTable<FlowField> exact_flows() const {
    const int k = scans.scan_count();
    PairTable<FlowField> flows(k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        if (a == b) continue;
        FlowField f;
        f.source = a;
        f.target = b;
        f.vectors = scans.clouds[static_cast<size_t>(b)].points -
                    scans.clouds[static_cast<size_t>(a)].points;
        flows.at(a, b) = f;
      }
    return flows;
  }

  PairTable<ConfidenceField> unit_confidences() const {
    const int k = scans.scan_count();
    const int n = scans.points_per_scan();
    PairTable<ConfidenceField> conf(k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        if (a != b) {
          ConfidenceField c;
          c.source = a;
          c.target = b;
          c.per_point = Vec::Ones(n);
          c.pair_weight = 1.0;
          conf.at(a, b) = c;
        }
    return conf;
  }
};

PartScene make_scene(oracle::TestRng& rng, int k, const std::vector<int>& part_sizes) {
  PartScene s;
  s.parts = static_cast<int>(part_sizes.size());
  int n = 0;
  for (int m : part_sizes) n += m;
  for (size_t p = 0; p < part_sizes.size(); ++p)
    s.labels_one_scan.insert(s.labels_one_scan.end(), static_cast<size_t>(part_sizes[p]),
                             static_cast<int>(p));

  PointMatrix base = rng.random_matrix(n, 3);
  int offset = 0;  // spread parts out so the scene is unambiguous
  for (size_t p = 0; p < part_sizes.size(); ++p) {
    base.middleRows(offset, part_sizes[p]).col(0).array() += 4.0 * static_cast<double>(p);
    offset += part_sizes[p];
  }

  s.gt.resize(static_cast<size_t>(k));
  for (int a = 0; a < k; ++a) {
    PointCloud cloud;
    cloud.scan_id = a;
    cloud.points.resize(n, 3);
    for (int p = 0; p < s.parts; ++p) {
      RigidTransform t;  // scan 0 keeps the identity
      if (a > 0) t = rng.random_transform(0.5);
      s.gt[static_cast<size_t>(a)].push_back(t);
    }
    for (int i = 0; i < n; ++i) {
      const RigidTransform& t =
          s.gt[static_cast<size_t>(a)][static_cast<size_t>(s.labels_one_scan[static_cast<size_t>(i)])];
      cloud.points.row(i) = t.apply(base.row(i).transpose()).transpose();
    }
    s.scans.clouds.push_back(cloud);
  }
  return s;
}

}  // namespace

TEST_CASE("weighted Kabsch basics") {
  oracle::TestRng rng(41);
  const PointMatrix src = rng.random_matrix(12, 3);
  SECTION("identical clouds give the identity") {
    const KabschResult r = weighted_kabsch(src, src, Vec::Ones(12));
    CHECK((r.transform.rotation - Mat3::Identity()).norm() < 1e-12);
    CHECK(r.transform.translation.norm() < 1e-12);
    CHECK_FALSE(r.degenerate);
  }
  SECTION("pure vertical shift") {
    PointMatrix dst = src;
    dst.col(2).array() += 5.0;
    const KabschResult r = weighted_kabsch(src, dst, Vec::Ones(12));
    CHECK((r.transform.rotation - Mat3::Identity()).norm() < 1e-12);
    CHECK((r.transform.translation - Vec3(0, 0, 5)).norm() < 1e-12);
  }
}

TEST_CASE("weighted Kabsch recovers random rigid motions") {
  oracle::TestRng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const PointMatrix src = rng.random_matrix(20, 3);
    const RigidTransform t = rng.random_transform();
    const PointMatrix dst = transform_points(t, src);
    const KabschResult r = weighted_kabsch(src, dst, Vec::Ones(20));
    CHECK((r.transform.rotation - t.rotation).norm() < 1e-9);
    CHECK((r.transform.translation - t.translation).norm() < 1e-9);
  }
}

TEST_CASE("weighted Kabsch weight semantics") {
  oracle::TestRng rng(43);
  const PointMatrix src = rng.random_matrix(30, 3);
  const RigidTransform t = rng.random_transform();
  PointMatrix dst = transform_points(t, src);
  Vec w(30);
  for (int i = 0; i < 30; ++i) w(i) = rng.uniform(0.1, 1.0);

  SECTION("uniform weight rescaling changes nothing") {
    const KabschResult a = weighted_kabsch(src, dst, w);
    const KabschResult b = weighted_kabsch(src, dst, 1000.0 * w);
    CHECK((a.transform.rotation - b.transform.rotation).norm() <= 1e-9);
    CHECK((a.transform.translation - b.transform.translation).norm() <= 1e-9);
  }
  SECTION("zero-weighted outliers cannot move the fit") {
    const KabschResult clean = weighted_kabsch(src, dst, w);
    PointMatrix spoiled = dst;
    Vec wz = w;
    for (int i = 0; i < 9; ++i) {  // 30% exact outliers, weight 0
      spoiled.row(i) += Vec3(10, -7, 4).transpose();
      wz(i) = 0.0;
    }
    const KabschResult r = weighted_kabsch(src, spoiled, wz);
    CHECK((r.transform.rotation - clean.transform.rotation).norm() <= 1e-8);
    CHECK((r.transform.translation - clean.transform.translation).norm() <= 1e-8);
  }
}

TEST_CASE("weighted Kabsch degeneracy and validation") {
  SECTION("collinear points fall back to translation") {
    PointMatrix src(5, 3);
    src.setZero();
    for (int i = 0; i < 5; ++i) src(i, 0) = static_cast<double>(i);
    PointMatrix dst = src;
    dst.col(1).array() += 2.0;
    const KabschResult r = weighted_kabsch(src, dst, Vec::Ones(5));
    CHECK(r.degenerate);
    CHECK((r.transform.rotation - Mat3::Identity()).norm() == 0.0);
    CHECK((r.transform.translation - Vec3(0, 2, 0)).norm() < 1e-12);
  }
  SECTION("bad inputs") {
    const PointMatrix pts = PointMatrix::Random(4, 3);
    CHECK_THROWS_MATCHES(weighted_kabsch(pts, pts, Vec::Zero(4)), Error,
                         code_is(ErrorCode::EmptyInput));
    Vec two = Vec::Zero(4);
    two(0) = two(1) = 1.0;
    CHECK_THROWS_MATCHES(weighted_kabsch(pts, pts, two), Error, code_is(ErrorCode::EmptyInput));
    Vec neg = Vec::Ones(4);
    neg(2) = -0.1;
    CHECK_THROWS_MATCHES(weighted_kabsch(pts, pts, neg), Error,
                         code_is(ErrorCode::InvalidConfig));
    CHECK_THROWS_MATCHES(weighted_kabsch(pts, PointMatrix::Random(3, 3), Vec::Ones(4)), Error,
                         code_is(ErrorCode::ShapeMismatch));
  }
}

TEST_CASE("per-part poses from exact flows") {
  oracle::TestRng rng(44);
  const PartScene s = make_scene(rng, 3, {8, 4});
  const PoseSet poses =
      per_part_poses(s.scans, s.exact_flows(), s.unit_confidences(), s.segmentation(), 0);

  SECTION("canonical scan poses are exact identities") {
    for (int p = 0; p < s.parts; ++p) {
      CHECK((poses.poses[0][static_cast<size_t>(p)].rotation - Mat3::Identity()).norm() == 0.0);
      CHECK(poses.poses[0][static_cast<size_t>(p)].translation.norm() == 0.0);
    }
  }
  SECTION("every other pose matches the ground truth") {
    for (int a = 1; a < 3; ++a)
      for (int p = 0; p < s.parts; ++p) {
        const RigidTransform& got = poses.poses[static_cast<size_t>(a)][static_cast<size_t>(p)];
        const RigidTransform& want = s.gt[static_cast<size_t>(a)][static_cast<size_t>(p)];
        CHECK((got.rotation - want.rotation).norm() < 1e-8);
        CHECK((got.translation - want.translation).norm() < 1e-8);
        CHECK(poses.status[static_cast<size_t>(a)][static_cast<size_t>(p)] ==
              PoseSet::FitStatus::Ok);
      }
  }
  SECTION("pure translation is recovered to 1e-8") {
    PartScene flat = make_scene(rng, 2, {10});
    flat.gt[1][0].rotation = Mat3::Identity();
    flat.gt[1][0].translation = Vec3(0.3, 0.1, -0.2);
    flat.scans.clouds[1].points =
        transform_points(flat.gt[1][0], flat.scans.clouds[0].points);
    const PoseSet p =
        per_part_poses(flat.scans, flat.exact_flows(), flat.unit_confidences(),
                       flat.segmentation(), 0);
    CHECK((p.poses[1][0].rotation - Mat3::Identity()).norm() < 1e-8);
    CHECK((p.poses[1][0].translation - Vec3(0.3, 0.1, -0.2)).norm() < 1e-8);
  }
}

TEST_CASE("per-part poses flag starved scans") {
  oracle::TestRng rng(45);
  const PartScene s = make_scene(rng, 3, {6, 6});
  PairTable<ConfidenceField> conf = s.unit_confidences();
  conf.at(0, 2).per_point.setZero();  // scan 2 gets no usable weight
  conf.at(0, 2).pair_weight = 0.0;
  const PoseSet poses = per_part_poses(s.scans, s.exact_flows(), conf, s.segmentation(), 0);
  for (int p = 0; p < 2; ++p) {
    CHECK(poses.status[2][static_cast<size_t>(p)] == PoseSet::FitStatus::EmptyPart);
    CHECK((poses.poses[2][static_cast<size_t>(p)].rotation - Mat3::Identity()).norm() == 0.0);
    CHECK(poses.status[1][static_cast<size_t>(p)] == PoseSet::FitStatus::Ok);
  }
}

TEST_CASE("rigid flow evaluation") {
  oracle::TestRng rng(46);
  SECTION("identity poses produce zero flow") {
    const PartScene s = make_scene(rng, 2, {5, 5});
    PoseSet idle;
    idle.canonical_scan = 0;
    idle.poses.assign(2, std::vector<RigidTransform>(2));
    idle.status.assign(2, std::vector<PoseSet::FitStatus>(2, PoseSet::FitStatus::Ok));
    const FlowField f = rigid_flow(idle, s.segmentation(), s.scans, 0, 1);
    CHECK(f.vectors.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("single-part translation gives constant flow") {
    const PartScene s = make_scene(rng, 2, {8});
    PoseSet poses;
    poses.canonical_scan = 0;
    poses.poses.assign(2, std::vector<RigidTransform>(1));
    poses.status.assign(2, std::vector<PoseSet::FitStatus>(1, PoseSet::FitStatus::Ok));
    poses.poses[1][0].translation = Vec3(1, 0, 0);
    const FlowField f = rigid_flow(poses, s.segmentation(), s.scans, 0, 1);
    for (int i = 0; i < 8; ++i) {
      CHECK(f.vectors(i, 0) == Catch::Approx(1.0));
      CHECK(std::abs(f.vectors(i, 1)) < 1e-15);
    }
  }
  SECTION("two rotating parts match brute-force evaluation and compose home") {
    const PartScene s = make_scene(rng, 3, {6, 6});
    PoseSet poses;
    poses.canonical_scan = 0;
    poses.poses = s.gt;
    poses.status.assign(3, std::vector<PoseSet::FitStatus>(2, PoseSet::FitStatus::Ok));
    const AbsoluteSegmentation seg = s.segmentation();
    const FlowField fwd = rigid_flow(poses, seg, s.scans, 1, 2);
    for (int i = 0; i < 12; ++i) {
      const int part = s.labels_one_scan[static_cast<size_t>(i)];
      const RigidTransform chain =
          s.gt[2][static_cast<size_t>(part)].compose(s.gt[1][static_cast<size_t>(part)].inverse());
      const Vec3 x = s.scans.clouds[1].points.row(i).transpose();
      const Vec3 expect = chain.apply(x) - x;
      CHECK((fwd.vectors.row(i).transpose() - expect).norm() < 1e-12);
    }
    // Round trip: with consistent scans, following flow (1,2) and then the
    // reverse flow at the landing index returns each point home.
    const FlowField back = rigid_flow(poses, seg, s.scans, 2, 1);
    for (int i = 0; i < 12; ++i) {
      const Vec3 x = s.scans.clouds[1].points.row(i).transpose();
      const Vec3 y = x + fwd.vectors.row(i).transpose();
      CHECK((y - s.scans.clouds[2].points.row(i).transpose()).norm() < 1e-9);
      const Vec3 home = y + back.vectors.row(i).transpose();
      CHECK((home - x).norm() < 1e-9);
    }
  }
}
