#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rigidsync/types.hpp"

namespace rigidsync {

namespace detail {

// O(n^3) shortest-augmenting-path assignment with row/column potentials.
// Returns some optimal row -> column assignment for a square cost matrix.
inline std::vector<int> min_cost_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> row_pot(n, 0.0), col_pot(n + 1, 0.0);
  std::vector<int> col_row(n + 1, -1);  // column -> assigned row; slot n seeds the path

  for (int r = 0; r < n; ++r) {
    col_row[n] = r;
    int cur = n;
    std::vector<double> slack(n, inf);
    std::vector<int> parent(n, n);
    std::vector<bool> visited(n + 1, false);
    while (col_row[cur] != -1) {
      visited[cur] = true;
      const int row = col_row[cur];
      double best = inf;
      int next = -1;
      for (int c = 0; c < n; ++c) {
        if (visited[c]) continue;
        const double reduced = cost(row, c) - row_pot[row] - col_pot[c];
        if (reduced < slack[c]) {
          slack[c] = reduced;
          parent[c] = cur;
        }
        if (slack[c] < best) {
          best = slack[c];
          next = c;
        }
      }
      for (int c = 0; c <= n; ++c) {
        if (visited[c]) {
          if (col_row[c] >= 0) row_pot[col_row[c]] += best;
          col_pot[c] -= best;
        } else if (c < n) {
          slack[c] -= best;
        }
      }
      cur = next;
    }
    while (cur != n) {  // augment along the alternating path
      const int prev = parent[cur];
      col_row[cur] = col_row[prev];
      cur = prev;
    }
  }

  std::vector<int> assignment(n, -1);
  for (int c = 0; c < n; ++c)
    if (col_row[c] >= 0) assignment[col_row[c]] = c;
  return assignment;
}

inline double assignment_cost(const Mat& cost, const std::vector<int>& a) {
  double total = 0.0;
  for (size_t r = 0; r < a.size(); ++r) total += cost(static_cast<int>(r), a[r]);
  return total;
}

}  // namespace detail

// Minimum-cost perfect assignment on a square cost matrix.  Among all optimal
// assignments the lexicographically smallest row -> column map is returned,
// found by fixing rows front to back to the smallest column that still admits
// an optimal completion.
inline std::vector<int> hungarian_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  require(n >= 1 && cost.cols() == n, ErrorCode::ShapeMismatch, "cost matrix must be square");
  require_finite(cost, "cost matrix");

  const double best_total = detail::assignment_cost(cost, detail::min_cost_assignment(cost));
  const double eps = 1e-9 * (1.0 + std::abs(best_total));

  std::vector<int> chosen(n, -1);
  std::vector<bool> used(n, false);
  double fixed = 0.0;
  for (int r = 0; r < n; ++r) {
    int fallback = -1;
    double fallback_total = std::numeric_limits<double>::infinity();
    for (int c = 0; c < n; ++c) {
      if (used[c]) continue;
      double total = fixed + cost(r, c);
      const int m = n - r - 1;
      if (m > 0) {
        Mat sub(m, m);
        std::vector<int> cols;
        cols.reserve(m);
        for (int cc = 0; cc < n; ++cc)
          if (!used[cc] && cc != c) cols.push_back(cc);
        for (int rr = 0; rr < m; ++rr)
          for (int cc = 0; cc < m; ++cc) sub(rr, cc) = cost(r + 1 + rr, cols[cc]);
        total += detail::assignment_cost(sub, detail::min_cost_assignment(sub));
      }
      if (total <= best_total + eps) {
        chosen[r] = c;
        break;
      }
      if (total < fallback_total) {
        fallback_total = total;
        fallback = c;
      }
    }
    if (chosen[r] < 0) chosen[r] = fallback;  // numerical safety net
    used[chosen[r]] = true;
    fixed += cost(r, chosen[r]);
  }
  return chosen;
}

namespace detail {

inline void validate_labels(const std::vector<int>& labels, int parts, const std::string& what) {
  require(parts >= 1, ErrorCode::InvalidLabels, what + ": part count must be >= 1");
  for (int v : labels)
    require(v >= 0 && v < parts, ErrorCode::InvalidLabels,
            what + ": label " + std::to_string(v) + " outside [0, " + std::to_string(parts) + ")");
}

}  // namespace detail

// Mean intersection-over-union between predicted and ground-truth parts under
// the one-to-one part matching that maximizes it.  Unmatched parts contribute
// zero and the average runs over max(pred parts, gt parts), so both over- and
// under-segmentation are penalized.
inline double miou(const std::vector<int>& pred, const std::vector<int>& gt, int parts_pred,
                   int parts_gt) {
  require(!pred.empty() && pred.size() == gt.size(), ErrorCode::LengthMismatch,
          "label vectors must be non-empty and equally sized");
  detail::validate_labels(pred, parts_pred, "pred");
  detail::validate_labels(gt, parts_gt, "gt");

  const int m = std::max(parts_pred, parts_gt);
  Mat inter = Mat::Zero(m, m);
  Vec pred_size = Vec::Zero(m), gt_size = Vec::Zero(m);
  for (size_t i = 0; i < pred.size(); ++i) {
    inter(gt[i], pred[i]) += 1.0;
    pred_size(pred[i]) += 1.0;
    gt_size(gt[i]) += 1.0;
  }

  Mat iou = Mat::Zero(m, m);
  for (int g = 0; g < m; ++g) {
    for (int p = 0; p < m; ++p) {
      const double uni = gt_size(g) + pred_size(p) - inter(g, p);
      iou(g, p) = (uni > 0.0) ? inter(g, p) / uni : 0.0;
    }
  }

  const std::vector<int> match = hungarian_assignment(-iou);
  double total = 0.0;
  for (int g = 0; g < m; ++g) total += iou(g, match[g]);
  return total / static_cast<double>(m);
}

// Fraction of point pairs on which two clusterings agree.  Computed from the
// contingency table, so this is exact and O(M + parts^2).
inline double rand_index(const std::vector<int>& pred, const std::vector<int>& gt, int parts_pred,
                         int parts_gt) {
  require(pred.size() == gt.size() && pred.size() >= 2, ErrorCode::LengthMismatch,
          "need two equally sized label vectors with at least 2 entries");
  detail::validate_labels(pred, parts_pred, "pred");
  detail::validate_labels(gt, parts_gt, "gt");

  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(parts_pred, parts_gt);
  for (size_t i = 0; i < pred.size(); ++i) table(pred[i], gt[i]) += 1.0;

  auto pairs = [](double c) { return 0.5 * c * (c - 1.0); };
  double both_same = 0.0;
  for (int i = 0; i < parts_pred; ++i)
    for (int j = 0; j < parts_gt; ++j) both_same += pairs(table(i, j));
  double same_pred = 0.0;
  for (int i = 0; i < parts_pred; ++i) same_pred += pairs(table.row(i).sum());
  double same_gt = 0.0;
  for (int j = 0; j < parts_gt; ++j) same_gt += pairs(table.col(j).sum());
  const double total = pairs(static_cast<double>(pred.size()));
  return (total + 2.0 * both_same - same_pred - same_gt) / total;
}

struct Epe3dStats {
  double mean = 0.0;
  double std_dev = 0.0;
};

inline double epe3d_pair(const FlowField& pred, const FlowField& gt) {
  require(pred.vectors.rows() == gt.vectors.rows() && pred.vectors.rows() > 0,
          ErrorCode::ShapeMismatch, "flow fields must be equally sized and non-empty");
  return (pred.vectors - gt.vectors).rowwise().norm().mean();
}

// Mean and population standard deviation of the per-pair endpoint error over
// all K(K-1) ordered scan pairs.
inline Epe3dStats epe3d_stats(const PairTable<FlowField>& pred, const PairTable<FlowField>& gt) {
  const int k = pred.scan_count();
  require(k == gt.scan_count() && k >= 2, ErrorCode::ShapeMismatch,
          "flow tables must agree on the scan count");
  std::vector<double> per_pair;
  per_pair.reserve(static_cast<size_t>(k) * (k - 1));
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b) per_pair.push_back(epe3d_pair(pred.at(a, b), gt.at(a, b)));

  Epe3dStats out;
  for (double v : per_pair) out.mean += v;
  out.mean /= static_cast<double>(per_pair.size());
  double var = 0.0;
  for (double v : per_pair) var += (v - out.mean) * (v - out.mean);
  out.std_dev = std::sqrt(var / static_cast<double>(per_pair.size()));
  return out;
}

struct MetricsReport {
  double epe3d_mean = 0.0;
  double epe3d_std = 0.0;
  double miou_multi = 0.0;
  double ri_multi = 0.0;
  double miou_per_scan_mean = 0.0;
  double miou_per_scan_std = 0.0;
  double ri_per_scan_mean = 0.0;
  double ri_per_scan_std = 0.0;
};

// Full report for one labeling + flow prediction against ground truth.
// Labels are scan-major (scan k occupies rows [k*n, (k+1)*n)).
inline MetricsReport compute_report(const std::vector<int>& pred_labels,
                                    const std::vector<int>& gt_labels, int k, int n, int parts_pred,
                                    int parts_gt, const PairTable<FlowField>& pred_flows,
                                    const PairTable<FlowField>& gt_flows) {
  require(pred_labels.size() == static_cast<size_t>(k) * n &&
              gt_labels.size() == pred_labels.size(),
          ErrorCode::LengthMismatch, "label vectors must hold k*n entries");

  MetricsReport r;
  const Epe3dStats epe = epe3d_stats(pred_flows, gt_flows);
  r.epe3d_mean = epe.mean;
  r.epe3d_std = epe.std_dev;
  r.miou_multi = miou(pred_labels, gt_labels, parts_pred, parts_gt);
  r.ri_multi = rand_index(pred_labels, gt_labels, parts_pred, parts_gt);

  std::vector<double> per_scan_miou(k), per_scan_ri(k);
  for (int s = 0; s < k; ++s) {
    const std::vector<int> p(pred_labels.begin() + static_cast<size_t>(s) * n,
                             pred_labels.begin() + static_cast<size_t>(s + 1) * n);
    const std::vector<int> g(gt_labels.begin() + static_cast<size_t>(s) * n,
                             gt_labels.begin() + static_cast<size_t>(s + 1) * n);
    per_scan_miou[s] = miou(p, g, parts_pred, parts_gt);
    per_scan_ri[s] = rand_index(p, g, parts_pred, parts_gt);
  }
  auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    sd = std::sqrt(var / static_cast<double>(v.size()));
  };
  mean_std(per_scan_miou, r.miou_per_scan_mean, r.miou_per_scan_std);
  mean_std(per_scan_ri, r.ri_per_scan_mean, r.ri_per_scan_std);
  return r;
}

}  // namespace rigidsync
