#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/grid.hpp"
#include "lldn/metrics.hpp"
#include "lldn/scene.hpp"

namespace lldn {

// Non-learning baseline: intensity thresholding, DBSCAN over the surviving
// BEV points, and a first-order fit per cluster rasterized one cell wide.
struct HeuristicConfig {
  double intensity_threshold = 128.0;
  double eps = 0.6;       // DBSCAN radius [m]
  int min_pts = 4;        // DBSCAN core threshold
  int min_fit_size = 8;   // clusters smaller than this are not fitted

  void validate() const {
    if (eps <= 0.0) throw ConfigError("heuristic: eps must be positive");
    if (min_pts < 1) throw ConfigError("heuristic: min_pts must be >= 1");
  }
};

struct Point2 {
  double x = 0, y = 0;
};

inline std::vector<Point2> threshold_points(const PointCloud& cloud, const HeuristicConfig& cfg) {
  std::vector<Point2> out;
  for (const Point& p : cloud.points)
    if (p.intensity > cfg.intensity_threshold) out.push_back({p.x, p.y});
  return out;
}

// Scan-order DBSCAN over Euclidean distance: points are visited in index
// order, clusters expand breadth-first, neighbor lists are index-ordered.
// Returns one label per point, -1 for noise.
inline std::vector<int> dbscan_cluster(const std::vector<Point2>& pts, double eps, int min_pts) {
  if (eps <= 0.0) throw ConfigError("dbscan: eps must be positive");
  const int n = static_cast<int>(pts.size());
  const double eps2 = eps * eps;

  // uniform-grid buckets keep neighbor queries near-linear
  double min_x = 0, min_y = 0;
  if (n > 0) {
    min_x = pts[0].x;
    min_y = pts[0].y;
    for (const auto& p : pts) {
      min_x = std::min(min_x, p.x);
      min_y = std::min(min_y, p.y);
    }
  }
  auto key = [&](double v, double lo) { return static_cast<long long>(std::floor((v - lo) / eps)); };
  auto pack = [](long long gx, long long gy) { return (gx << 24) ^ (gy & 0xffffff); };
  std::unordered_map<long long, std::vector<int>> buckets;
  for (int i = 0; i < n; ++i)
    buckets[pack(key(pts[static_cast<std::size_t>(i)].x, min_x), key(pts[static_cast<std::size_t>(i)].y, min_y))]
        .push_back(i);
  auto neighbors = [&](int i) {
    std::vector<int> out;
    long long gx = key(pts[static_cast<std::size_t>(i)].x, min_x);
    long long gy = key(pts[static_cast<std::size_t>(i)].y, min_y);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy) {
        auto it = buckets.find(pack(gx + dx, gy + dy));
        if (it == buckets.end()) continue;
        for (int j : it->second) {
          double ddx = pts[static_cast<std::size_t>(i)].x - pts[static_cast<std::size_t>(j)].x;
          double ddy = pts[static_cast<std::size_t>(i)].y - pts[static_cast<std::size_t>(j)].y;
          if (ddx * ddx + ddy * ddy <= eps2) out.push_back(j);
        }
      }
    std::sort(out.begin(), out.end());
    return out;
  };

  std::vector<int> label(static_cast<std::size_t>(n), -1);
  std::vector<bool> visited(static_cast<std::size_t>(n), false);
  int next_cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (visited[static_cast<std::size_t>(i)]) continue;
    visited[static_cast<std::size_t>(i)] = true;
    auto nbr = neighbors(i);
    if (static_cast<int>(nbr.size()) < min_pts) continue;  // not core; may become border later
    const int cid = next_cluster++;
    label[static_cast<std::size_t>(i)] = cid;
    std::vector<int> queue = nbr;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      int j = queue[qi];
      if (label[static_cast<std::size_t>(j)] == -1) label[static_cast<std::size_t>(j)] = cid;
      if (visited[static_cast<std::size_t>(j)]) continue;
      visited[static_cast<std::size_t>(j)] = true;
      auto jn = neighbors(j);
      if (static_cast<int>(jn.size()) >= min_pts)
        for (int k : jn) queue.push_back(k);
    }
  }
  return label;
}

// Least-squares first-order fit y = a x + b over one cluster's x-span,
// traced one cell wide; clusters with no x spread fall back to a lateral
// segment at their mean x.
inline void rasterize_cluster_fit(const std::vector<Point2>& pts, const GridSpec& grid,
                                  std::vector<std::uint8_t>& map) {
  const int n = static_cast<int>(pts.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double x_min = pts[0].x, x_max = pts[0].x, y_min = pts[0].y, y_max = pts[0].y;
  for (const auto& p : pts) {
    sx += p.x;
    sy += p.y;
    sxx += p.x * p.x;
    sxy += p.x * p.y;
    x_min = std::min(x_min, p.x);
    x_max = std::max(x_max, p.x);
    y_min = std::min(y_min, p.y);
    y_max = std::max(y_max, p.y);
  }
  const double det = n * sxx - sx * sx;
  double ax0, ay0, ax1, ay1;  // metric segment endpoints
  if (x_max - x_min < 1e-9) {
    // zero x-variance: vertical fallback x = mean across the y spread
    double xm = sx / n;
    ax0 = xm;
    ay0 = y_min;
    ax1 = xm;
    ay1 = y_max;
  } else {
    double a = (n * sxy - sx * sy) / det;
    double b = (sy - a * sx) / n;
    ax0 = x_min;
    ay0 = a * x_min + b;
    ax1 = x_max;
    ay1 = a * x_max + b;
  }
  // clip the segment to the grid extent in metric space
  double t0 = 0.0, t1 = 1.0;
  const double dx = ax1 - ax0, dy = ay1 - ay0;
  auto clip = [&](double p, double q) {
    if (std::abs(p) < 1e-300) return q >= 0;
    double t = q / p;
    if (p < 0) {
      if (t > t1) return false;
      t0 = std::max(t0, t);
    } else {
      if (t < t0) return false;
      t1 = std::min(t1, t);
    }
    return true;
  };
  const double margin = 1e-9;
  if (!clip(-dx, ax0 - grid.x0) || !clip(dx, grid.x1() - margin - ax0) ||
      !clip(-dy, ay0 - grid.y0) || !clip(dy, grid.y1() - margin - ay0))
    return;
  int r0 = grid.row_of(ax0 + t0 * dx), c0 = grid.col_of(ay0 + t0 * dy);
  int r1 = grid.row_of(ax0 + t1 * dx), c1 = grid.col_of(ay0 + t1 * dy);
  r0 = std::clamp(r0, 0, grid.rows - 1);
  r1 = std::clamp(r1, 0, grid.rows - 1);
  c0 = std::clamp(c0, 0, grid.cols - 1);
  c1 = std::clamp(c1, 0, grid.cols - 1);
  trace_cells(r0, c0, r1, c1,
              [&](int r, int c) { map[static_cast<std::size_t>(r) * grid.cols + c] = 1; });
}

inline std::vector<std::uint8_t> fit_and_rasterize(const std::vector<Point2>& pts,
                                                   const std::vector<int>& labels, const GridSpec& grid,
                                                   int min_fit_size) {
  std::vector<std::uint8_t> map(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
  int n_clusters = 0;
  for (int l : labels) n_clusters = std::max(n_clusters, l + 1);
  for (int c = 0; c < n_clusters; ++c) {
    std::vector<Point2> cluster;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) cluster.push_back(pts[i]);
    if (static_cast<int>(cluster.size()) >= min_fit_size) rasterize_cluster_fit(cluster, grid, map);
  }
  return map;
}

// The full pipeline as a Detector for the shared evaluator; produces a
// confidence map only (no classification).
inline Detector heuristic_detector(HeuristicConfig cfg) {
  cfg.validate();
  return [cfg](const Frame& frame) {
    const GridSpec& grid = frame.label.grid;
    auto candidates = threshold_points(frame.cloud, cfg);
    auto labels = dbscan_cluster(candidates, cfg.eps, cfg.min_pts);
    auto map = fit_and_rasterize(candidates, labels, grid, cfg.min_fit_size);
    Detection det;
    det.confidence.assign(map.size(), 0.0);
    for (std::size_t i = 0; i < map.size(); ++i) det.confidence[i] = map[i] ? 1.0 : 0.0;
    return det;
  };
}

}  // namespace lldn
