#pragma once

// Independent reference implementations used only to cross-check the library.
// Kept deliberately separate from the code under test: the eigensolver here is
// a plain cyclic Jacobi, the assignment solver enumerates permutations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct EigenResult {
  Vec values;   // ascending
  Mat vectors;  // columns match values
};

// Cyclic Jacobi with full sweeps until the off-diagonal mass is negligible.
// Textbook plane rotations written out as explicit loops.
inline EigenResult jacobi_eigensolver(Mat a) {
  const int n = static_cast<int>(a.rows());
  Mat v = Mat::Identity(n, n);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) < 1e-15 * scale * n) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        const double apq = a(p, q);
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) < a(j, j); });
  EigenResult out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int i = 0; i < n; ++i) {
    out.values(i) = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
  }
  return out;
}

// Minimum-cost assignment by exhaustive search, returning the
// lexicographically smallest optimal row->column permutation.
inline std::vector<int> brute_force_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n), best(n);
  std::iota(perm.begin(), perm.end(), 0);
  best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost(i, perm[i]);
    if (!std::isfinite(best_cost) || c < best_cost - 1e-12 * (1.0 + std::abs(best_cost))) {
      best_cost = c;
      best = perm;  // permutations are visited in lexicographic order
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Deterministic 64-bit generator for test data (kept independent of the
// library's generator on purpose).
class TestRng {
 public:
  explicit TestRng(uint64_t seed) : state_(seed ^ 0x2545f4914f6cdd1dull) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }
  double gaussian() {
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Mat random_matrix(int rows, int cols) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = gaussian();
    return m;
  }

  Mat random_symmetric(int n) {
    Mat m = random_matrix(n, n);
    return 0.5 * (m + m.transpose());
  }

  // Random permutation matrix (n x n).
  Mat random_permutation(int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[uniform_int(0, i)]);
    Mat p = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) p(i, idx[i]) = 1.0;
    return p;
  }

  std::vector<int> random_index_permutation(int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[uniform_int(0, i)]);
    return idx;
  }

  // Uniform-ish random rotation via QR of a Gaussian matrix, determinant
  // corrected to +1.
  rigidsync::Mat3 random_rotation() {
    const Mat g = random_matrix(3, 3);
    rigidsync::Mat3 q = Eigen::HouseholderQR<Mat>(g).householderQ();
    if (q.determinant() < 0.0) q.col(0) = -q.col(0);
    return q;
  }

  rigidsync::RigidTransform random_transform(double translation_scale = 1.0) {
    rigidsync::RigidTransform t;
    t.rotation = random_rotation();
    for (int i = 0; i < 3; ++i) t.translation(i) = translation_scale * gaussian();
    return t;
  }

 private:
  uint64_t state_;
};

}  // namespace oracle
