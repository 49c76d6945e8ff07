#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rigidsync/perm_sync.hpp"
#include "support/oracles.hpp"

using namespace rigidsync;

namespace {

PointCloud make_cloud(const PointMatrix& pts, int id) {
  PointCloud c;
  c.points = pts;
  c.scan_id = id;
  return c;
}

FlowField make_flow(int source, int target, const PointMatrix& v) {
  FlowField f;
  f.source = source;
  f.target = target;
  f.vectors = v;
  return f;
}

// Cycle-consistent pairwise assignments P^{ab} = Q^a (Q^b)^T from one random
// permutation per scan, with unit weights.
struct PermInstance {
  std::vector<Mat> q;
  PairTable<Mat> assignments;
  PairTable<double> weights;
};

PermInstance consistent_perms(int k, int n, oracle::TestRng& rng) {
  PermInstance inst;
  inst.assignments = PairTable<Mat>(k);
  inst.weights = PairTable<double>(k);
  for (int a = 0; a < k; ++a) inst.q.push_back(rng.random_permutation(n));
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b) {
        inst.assignments.at(a, b) = inst.q[a] * inst.q[b].transpose();
        inst.weights.at(a, b) = 1.0;
      }
  return inst;
}

std::vector<int> row_argmax(const Mat& m) {
  std::vector<int> out(m.rows());
  for (int i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < m.cols(); ++j)
      if (m(i, j) > m(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

auto code_is(ErrorCode c) {
  return Catch::Matchers::Predicate<Error>([c](const Error& e) { return e.code() == c; });
}

}  // namespace

TEST_CASE("soft assignment hand values") {
  SyncConfig cfg;
  SECTION("single candidate gets everything") {
    const PointCloud a = make_cloud(PointMatrix::Zero(1, 3), 0);
    const PointCloud b = make_cloud(PointMatrix::Zero(1, 3), 1);
    const SoftAssignment p =
        soft_assignment_from_flow(a, b, make_flow(0, 1, PointMatrix::Zero(1, 3)), cfg);
    CHECK(p.matrix(0, 0) == Catch::Approx(1.0));
  }
  SECTION("equidistant candidates split evenly") {
    PointMatrix src(2, 3), dst(2, 3);
    src.setZero();
    dst << 0.0, 1.0, 0.0, 0.0, -1.0, 0.0;
    const SoftAssignment p = soft_assignment_from_flow(
        make_cloud(src, 0), make_cloud(dst, 1), make_flow(0, 1, PointMatrix::Zero(2, 3)), cfg);
    CHECK(p.matrix(0, 0) == Catch::Approx(0.5));
    CHECK(p.matrix(0, 1) == Catch::Approx(0.5));
  }
  SECTION("unit squared-distance gap at tau 0.01") {
    PointMatrix src(2, 3), dst(2, 3);
    src.setZero();
    dst << 0.0, 0.0, 0.0, 1.0, 0.0, 0.0;
    const SoftAssignment p = soft_assignment_from_flow(
        make_cloud(src, 0), make_cloud(dst, 1), make_flow(0, 1, PointMatrix::Zero(2, 3)), cfg);
    const double tail = std::exp(-100.0) / (1.0 + std::exp(-100.0));
    CHECK(p.matrix(0, 0) == Catch::Approx(1.0 / (1.0 + std::exp(-100.0))));
    CHECK(p.matrix(0, 1) == Catch::Approx(tail));
  }
}

TEST_CASE("soft assignment rows always sum to one") {
  oracle::TestRng rng(11);
  SyncConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(1, 12);
    const PointCloud a = make_cloud(rng.random_matrix(n, 3), 0);
    const PointCloud b = make_cloud(rng.random_matrix(n, 3), 1);
    const SoftAssignment p =
        soft_assignment_from_flow(a, b, make_flow(0, 1, 0.1 * rng.random_matrix(n, 3)), cfg);
    for (int i = 0; i < n; ++i) {
      CHECK(p.matrix.row(i).sum() == Catch::Approx(1.0).margin(1e-9));
      CHECK(p.matrix.row(i).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("soft assignment input checking") {
  const PointCloud a = make_cloud(PointMatrix::Zero(1, 3), 0);
  const PointCloud b = make_cloud(PointMatrix::Zero(1, 3), 1);
  SyncConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS_MATCHES(
      soft_assignment_from_flow(a, b, make_flow(0, 1, PointMatrix::Zero(1, 3)), bad), Error,
      code_is(ErrorCode::TemperatureNonPositive));
  CHECK_THROWS_MATCHES(
      soft_assignment_from_flow(a, b, make_flow(1, 0, PointMatrix::Zero(1, 3)), SyncConfig{}),
      Error, code_is(ErrorCode::ShapeMismatch));
  PointMatrix nanflow = PointMatrix::Zero(1, 3);
  nanflow(0, 0) = std::nan("");
  CHECK_THROWS_MATCHES(soft_assignment_from_flow(a, b, make_flow(0, 1, nanflow), SyncConfig{}),
                       Error, code_is(ErrorCode::NonFinite));
}

TEST_CASE("pair weight is the mean confidence") {
  CHECK(pair_weight(Vec::Ones(4)) == Catch::Approx(1.0));
  CHECK(pair_weight(Vec::Zero(2)) == Catch::Approx(0.0));
  Vec v(3);
  v << 0.2, 0.4, 0.9;
  CHECK(pair_weight(v) == Catch::Approx(0.5));
  CHECK_THROWS_MATCHES(pair_weight(Vec()), Error, code_is(ErrorCode::EmptyInput));
}

TEST_CASE("transpose renormalization") {
  oracle::TestRng rng(12);
  const Mat q = rng.random_permutation(5);
  CHECK((transpose_renormalize(q) - q.transpose()).cwiseAbs().maxCoeff() == 0.0);

  Mat soft(2, 2);
  soft << 0.75, 0.25, 0.5, 0.5;
  const Mat r = transpose_renormalize(soft);
  for (int i = 0; i < 2; ++i) CHECK(r.row(i).sum() == Catch::Approx(1.0));
  CHECK(r(0, 0) == Catch::Approx(0.75 / 1.25));
}

TEST_CASE("connection Laplacian hand instances") {
  SECTION("two scans, identity coupling") {
    PairTable<Mat> p(2);
    PairTable<double> w(2);
    p.at(0, 1) = Mat::Identity(2, 2);
    p.at(1, 0) = Mat::Identity(2, 2);
    w.at(0, 1) = w.at(1, 0) = 1.0;
    const Mat gcl = build_weighted_gcl(p, w, 2);
    Mat expect(4, 4);
    expect << 1, 0, -1, 0, 0, 1, 0, -1, -1, 0, 1, 0, 0, -1, 0, 1;
    CHECK((gcl - expect).cwiseAbs().maxCoeff() == 0.0);
    const Vec ev = sym_eigendecomp(gcl).values;
    CHECK(ev(0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(ev(1) == Catch::Approx(0.0).margin(1e-12));
    CHECK(ev(2) == Catch::Approx(2.0));
    CHECK(ev(3) == Catch::Approx(2.0));
  }
  SECTION("zero weights give the zero matrix") {
    PairTable<Mat> p(2);
    PairTable<double> w(2);
    p.at(0, 1) = p.at(1, 0) = Mat::Identity(2, 2);
    w.at(0, 1) = w.at(1, 0) = 0.0;
    CHECK(build_weighted_gcl(p, w, 2).isZero(0.0));
  }
  SECTION("complete identity triangle") {
    const int n = 3;
    PairTable<Mat> p(3);
    PairTable<double> w(3);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) {
          p.at(a, b) = Mat::Identity(n, n);
          w.at(a, b) = 1.0;
        }
    const Mat gcl = build_weighted_gcl(p, w, n);
    CHECK((gcl.block(0, 0, n, n) - 2.0 * Mat::Identity(n, n)).cwiseAbs().maxCoeff() == 0.0);
    const Vec ev = sym_eigendecomp(gcl).values;
    for (int i = 0; i < n; ++i) CHECK(std::abs(ev(i)) < 1e-12);
  }
  SECTION("missing and mismatched pairs are rejected") {
    PairTable<Mat> p(2);
    PairTable<double> w(2);
    p.at(0, 1) = Mat::Identity(2, 2);  // (1,0) left empty
    w.at(0, 1) = w.at(1, 0) = 1.0;
    CHECK_THROWS_MATCHES(build_weighted_gcl(p, w, 2), Error, code_is(ErrorCode::MissingPair));
    p.at(1, 0) = Mat::Identity(2, 2);
    w.at(1, 0) = 0.5;
    CHECK_THROWS_MATCHES(build_weighted_gcl(p, w, 2), Error, code_is(ErrorCode::WeightMismatch));
  }
}

TEST_CASE("synchronization recovers cycle-consistent permutations") {
  oracle::TestRng rng(13);
  SECTION("two scans: block is the pairwise map over K") {
    const int n = 6;
    const PermInstance inst = consistent_perms(2, n, rng);
    const SyncedCorrespondences sync =
        synchronize_permutations(build_weighted_gcl(inst.assignments, inst.weights, n), 2, n);
    const Mat expect = 0.5 * inst.q[0] * inst.q[1].transpose();
    CHECK((sync.blocks.at(0, 1) - expect).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(row_argmax(sync.blocks.at(0, 1)) == row_argmax(inst.assignments.at(0, 1)));
  }
  SECTION("identity everywhere stays identity") {
    const int n = 4;
    PairTable<Mat> p(3);
    PairTable<double> w(3);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) {
          p.at(a, b) = Mat::Identity(n, n);
          w.at(a, b) = 1.0;
        }
    const SyncedCorrespondences sync =
        synchronize_permutations(build_weighted_gcl(p, w, n), 3, n);
    CHECK((sync.blocks.at(0, 2) - Mat::Identity(n, n) / 3.0).cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("argmax recovery across four scans") {
    const int n = 8;
    const PermInstance inst = consistent_perms(4, n, rng);
    const SyncedCorrespondences sync =
        synchronize_permutations(build_weighted_gcl(inst.assignments, inst.weights, n), 4, n);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        if (a != b)
          CHECK(row_argmax(sync.blocks.at(a, b)) == row_argmax(inst.assignments.at(a, b)));
  }
}

TEST_CASE("zero-weight pairs cannot influence the result") {
  oracle::TestRng rng(14);
  const int n = 5;
  PermInstance clean = consistent_perms(3, n, rng);
  const SyncedCorrespondences base =
      synchronize_permutations(build_weighted_gcl(clean.assignments, clean.weights, n), 3, n);

  // Corrupt pair (0,1) with sub-stochastic noise but drop its weight to zero;
  // the graph stays connected through scan 2.
  PermInstance dirty = clean;
  Mat junk(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) junk(i, j) = 0.1 * rng.uniform();
  dirty.assignments.at(0, 1) = junk;
  dirty.assignments.at(1, 0) = junk.transpose();
  dirty.weights.at(0, 1) = dirty.weights.at(1, 0) = 0.0;
  const SyncedCorrespondences got =
      synchronize_permutations(build_weighted_gcl(dirty.assignments, dirty.weights, n), 3, n);

  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if (a != b)
        CHECK((got.blocks.at(a, b) - base.blocks.at(a, b)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("blocks are gauge invariant") {
  oracle::TestRng rng(15);
  const int n = 6;
  const PermInstance inst = consistent_perms(2, n, rng);
  const SyncedCorrespondences sync =
      synchronize_permutations(build_weighted_gcl(inst.assignments, inst.weights, n), 2, n);

  const Eigen::HouseholderQR<Mat> qr(rng.random_matrix(n, n));
  const Mat gauge = qr.householderQ();
  const Mat rotated = sync.universe_embedding * gauge;
  const Mat block01 = rotated.middleRows(0, n) * rotated.middleRows(n, n).transpose();
  CHECK((block01 - sync.blocks.at(0, 1)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("disconnected weight graphs are rejected") {
  CHECK_THROWS_MATCHES(synchronize_permutations(Mat::Zero(4, 4), 2, 2), Error,
                       code_is(ErrorCode::DisconnectedGraph));

  // Two separate components (0,1) and (2,3).
  const int n = 3;
  PairTable<Mat> p(4);
  PairTable<double> w(4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      if (a != b) {
        p.at(a, b) = Mat::Identity(n, n);
        w.at(a, b) = 0.0;
      }
  w.at(0, 1) = w.at(1, 0) = 1.0;
  w.at(2, 3) = w.at(3, 2) = 1.0;
  CHECK_THROWS_MATCHES(synchronize_permutations(build_weighted_gcl(p, w, n), 4, n), Error,
                       code_is(ErrorCode::DisconnectedGraph));
}

TEST_CASE("induced flow read-out") {
  SyncConfig cfg;
  oracle::TestRng rng(16);
  SECTION("sharp diagonal block moves points onto their counterparts") {
    const int n = 3;
    const PointCloud a = make_cloud(rng.random_matrix(n, 3), 0);
    const PointCloud b = make_cloud(rng.random_matrix(n, 3), 1);
    const FlowField f = induced_flow(10.0 * Mat::Identity(n, n), a, b, cfg);
    CHECK((f.vectors - (b.points - a.points)).cwiseAbs().maxCoeff() < 1e-6);
  }
  SECTION("flat block points to the target centroid") {
    const int n = 4;
    const PointCloud a = make_cloud(rng.random_matrix(n, 3), 0);
    const PointCloud b = make_cloud(rng.random_matrix(n, 3), 1);
    const FlowField f = induced_flow(Mat::Constant(n, n, 0.7), a, b, cfg);
    const Vec3 centroid = b.points.colwise().mean().transpose();
    for (int i = 0; i < n; ++i)
      CHECK((f.vectors.row(i) - (centroid.transpose() - a.points.row(i))).cwiseAbs().maxCoeff() <
            1e-12);
  }
  SECTION("three-to-one score odds give a quarter step") {
    SyncConfig fixed;
    fixed.t_flow = 0.5;
    fixed.t_flow_absolute = true;
    PointMatrix src(2, 3), dst(2, 3);
    src.setZero();
    dst << 0.0, 0.0, 0.0, 1.0, 0.0, 0.0;
    Mat block(2, 2);
    block << std::log(3.0) * 0.5, 0.0, 0.0, std::log(3.0) * 0.5;
    const FlowField f = induced_flow(block, make_cloud(src, 0), make_cloud(dst, 1), fixed);
    CHECK(f.vectors(0, 0) == Catch::Approx(0.25));
    CHECK(f.vectors(1, 0) == Catch::Approx(0.75));
    CHECK(f.vectors.col(1).cwiseAbs().maxCoeff() < 1e-15);
  }
  SECTION("adaptive temperature is scale free") {
    const int n = 5;
    const PointCloud a = make_cloud(rng.random_matrix(n, 3), 0);
    const PointCloud b = make_cloud(rng.random_matrix(n, 3), 1);
    Mat block = rng.random_matrix(n, n);
    block(2, 3) = 2.0;  // ensure a positive maximum
    const FlowField f1 = induced_flow(block, a, b, cfg);
    const FlowField f2 = induced_flow(5.0 * block, a, b, cfg);
    CHECK((f1.vectors - f2.vectors).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("synchronization energy") {
  SECTION("ground-truth stack has zero energy") {
    oracle::TestRng rng(17);
    const int n = 5;
    const PermInstance inst = consistent_perms(3, n, rng);
    Mat pbar(3 * n, n);
    for (int a = 0; a < 3; ++a) pbar.middleRows(a * n, n) = inst.q[a];
    CHECK(sync_energy(pbar, inst.assignments, inst.weights) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("identity-vs-zero stack costs both ordered terms") {
    const int n = 3;
    PairTable<Mat> p(2);
    PairTable<double> w(2);
    p.at(0, 1) = p.at(1, 0) = Mat::Identity(n, n);
    w.at(0, 1) = w.at(1, 0) = 1.0;
    Mat pbar = Mat::Zero(2 * n, n);
    pbar.topRows(n) = Mat::Identity(n, n);
    CHECK(sync_energy(pbar, p, w) == Catch::Approx(2.0 * n));
  }
  SECTION("energy equals twice the Laplacian quadratic form") {
    oracle::TestRng rng(18);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = rng.uniform_int(2, 4);
      const int n = rng.uniform_int(2, 6);
      PairTable<Mat> p(k);
      PairTable<double> w(k);
      for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b) {
          const Mat perm = rng.random_permutation(n);
          p.at(a, b) = perm;
          p.at(b, a) = perm.transpose();
          w.at(a, b) = w.at(b, a) = rng.uniform();
        }
      const Mat pbar = rng.random_matrix(k * n, n);
      const double e = sync_energy(pbar, p, w);
      const double quad = 2.0 * (pbar.transpose() * build_weighted_gcl(p, w, n) * pbar).trace();
      CHECK(std::abs(e - quad) <= 1e-9 * (1.0 + std::abs(e)));
    }
  }
}
