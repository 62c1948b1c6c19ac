#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/grid.hpp"
#include "lldn/rng.hpp"

namespace lldn {

struct Point {
  float x = 0, y = 0, z = 0;
  float intensity = 0;
  float reflectivity = 0;
  bool operator==(const Point&) const = default;
};

struct PointCloud {
  std::vector<Point> points;
  bool operator==(const PointCloud&) const = default;
};

// ---- conditions ------------------------------------------------------------

enum class Condition : int {
  Urban = 0,
  Highway,
  Night,
  Daytime,
  Normal,
  GentleCurve,
  SharpCurve,
  Merging,
  Occ0,
  Occ1,
  Occ2,
  Occ3,
  Occ4to6,
};

inline constexpr int kNumConditions = 13;

inline const char* condition_name(Condition c) {
  static const char* names[kNumConditions] = {
      "urban",       "highway",     "night",       "daytime",     "normal",
      "gentle-curve", "sharp-curve", "merging",     "occlusion-0", "occlusion-1",
      "occlusion-2", "occlusion-3", "occlusion-4-6"};
  return names[static_cast<int>(c)];
}

struct ConditionTags {
  std::uint16_t bits = 0;

  bool has(Condition c) const { return (bits >> static_cast<int>(c)) & 1u; }
  void set(Condition c) { bits = static_cast<std::uint16_t>(bits | (1u << static_cast<int>(c))); }
  bool operator==(const ConditionTags&) const = default;

  std::vector<Condition> list() const {
    std::vector<Condition> out;
    for (int i = 0; i < kNumConditions; ++i)
      if ((bits >> i) & 1u) out.push_back(static_cast<Condition>(i));
    return out;
  }
};

// ---- lane geometry ---------------------------------------------------------

// One lane line. Lateral position is a function of the longitudinal
// coordinate x; arcs share a common deviation curve so lanes stay parallel.
struct LaneSpec {
  enum class Kind { Line, Arc, Merge };

  int class_id = 1;
  Kind kind = Kind::Line;
  double offset = 0.0;    // lateral position at x = 0 [m]
  double heading = 0.0;   // Line only: angle against +x [rad]
  double radius = 0.0;    // Arc only: signed, positive bends toward +y [m]
  double merge_to = 0.0;  // Merge only: lateral position reached at x_join
  double x_join = 20.0;   // Merge only
  double width = 0.16;    // mark width [m]

  // Lateral position at x, or nullopt where the lane is not defined.
  std::optional<double> lateral(double x) const {
    switch (kind) {
      case Kind::Line:
        return offset + std::tan(heading) * x;
      case Kind::Arc: {
        double a = std::abs(radius);
        if (x < 0.0 || x >= a) return std::nullopt;
        double dev = a - std::sqrt(a * a - x * x);
        return offset + (radius > 0 ? dev : -dev);
      }
      case Kind::Merge: {
        double t = x_join > 0 ? std::clamp(x / x_join, 0.0, 1.0) : 1.0;
        return offset + (merge_to - offset) * t;
      }
    }
    return std::nullopt;
  }
};

// ---- label raster ----------------------------------------------------------

struct LabelRaster {
  GridSpec grid;
  std::vector<std::uint8_t> cells;  // row-major class ids, 0 = background

  LabelRaster() = default;
  explicit LabelRaster(GridSpec g) : grid(g), cells(static_cast<std::size_t>(g.rows) * g.cols, 0) {}

  std::uint8_t at(int r, int c) const { return cells[static_cast<std::size_t>(r) * grid.cols + c]; }
  void set(int r, int c, std::uint8_t v) { cells[static_cast<std::size_t>(r) * grid.cols + c] = v; }

  // confidence label: 1 wherever any lane class is present
  std::vector<std::uint8_t> confidence() const {
    std::vector<std::uint8_t> out(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) out[i] = cells[i] > 0 ? 1 : 0;
    return out;
  }

  bool operator==(const LabelRaster&) const = default;
};

// Digital line between two cells; calls fn(r, c) for every cell on the
// segment, endpoints included.
template <typename Fn>
inline void trace_cells(int r0, int c0, int r1, int c1, Fn&& fn) {
  int dr = std::abs(r1 - r0), dc = -std::abs(c1 - c0);
  int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
  int err = dr + dc;
  while (true) {
    fn(r0, c0);
    if (r0 == r1 && c0 == c1) break;
    int e2 = 2 * err;
    if (e2 >= dc) {
      err += dc;
      r0 += sr;
    }
    if (e2 <= dr) {
      err += dr;
      c0 += sc;
    }
  }
}

// Traces each lane centerline one cell wide. Lanes are processed in ascending
// class id and never overwrite already-labeled cells, so the smaller class id
// wins at crossings. Cells outside the extent are clipped.
inline LabelRaster rasterize_label(const std::vector<LaneSpec>& lanes, const GridSpec& grid) {
  LabelRaster label(grid);
  std::vector<LaneSpec> sorted = lanes;
  std::sort(sorted.begin(), sorted.end(),
            [](const LaneSpec& a, const LaneSpec& b) { return a.class_id < b.class_id; });
  for (const auto& lane : sorted) {
    auto mark = [&](int r, int c) {
      if (grid.in_bounds(r, c) && label.at(r, c) == 0)
        label.set(r, c, static_cast<std::uint8_t>(lane.class_id));
    };
    std::optional<std::pair<int, int>> prev;
    for (int r = 0; r < grid.rows; ++r) {
      auto y = lane.lateral(grid.row_center(r));
      if (!y) {
        prev.reset();
        continue;
      }
      int c = grid.col_of(*y);
      if (c < 0 || c >= grid.cols) {
        prev.reset();
        continue;
      }
      if (prev && std::abs(c - prev->second) > 1)
        trace_cells(prev->first, prev->second, r, c, mark);
      else
        mark(r, c);
      prev = {r, c};
    }
  }
  return label;
}

// ---- scene configuration ----------------------------------------------------

struct SceneConfig {
  GridSpec grid;
  int lanes = 3;               // 1..6
  double curve_radius = 0.0;   // 0 = straight, else signed radius [m]
  bool merge = false;
  bool merge_diverge = false;  // false: converging, true: diverging
  int occluded = 0;            // occluded lane count, 0..lanes
  bool night = false;          // proxy: strong ground illumination spot
  int points = 8192;
  double mark_width = 0.16;
  double lane_spacing = 3.0;
  std::vector<double> lane_offsets;  // optional explicit lateral offsets

  void validate() const {
    grid.validate();
    int n = lane_offsets.empty() ? lanes : static_cast<int>(lane_offsets.size());
    if (n < 1 || n > 6) throw ConfigError("scene: lane count must be in 1..6");
    if (occluded < 0 || occluded > n)
      throw ConfigError("scene: occluded count " + std::to_string(occluded) +
                        " exceeds lane count " + std::to_string(n));
    if (curve_radius != 0.0 && std::abs(curve_radius) <= grid.extent_x())
      throw ConfigError("scene: curve radius must exceed the grid extent");
    if (points < 0) throw ConfigError("scene: negative point budget");
  }

  // class_id k -> lateral offset; alternates left/right from the ego lane
  double offset_of_class(int k) const {
    if (!lane_offsets.empty()) return lane_offsets[static_cast<std::size_t>(k - 1)];
    double half = lane_spacing / 2.0;
    double mag = half + lane_spacing * ((k - 1) / 2);
    return (k % 2 == 1) ? -mag : mag;
  }

  int lane_count() const { return lane_offsets.empty() ? lanes : static_cast<int>(lane_offsets.size()); }
};

// Appendix-style condition annotation; a pure function of the config.
inline ConditionTags annotate_conditions(const SceneConfig& cfg) {
  ConditionTags tags;
  tags.set(cfg.lane_count() >= 4 ? Condition::Highway : Condition::Urban);
  tags.set(cfg.night ? Condition::Night : Condition::Daytime);
  if (cfg.curve_radius != 0.0) {
    tags.set(std::abs(cfg.curve_radius) > 160.0 ? Condition::GentleCurve : Condition::SharpCurve);
  } else if (!cfg.merge) {
    tags.set(Condition::Normal);
  }
  if (cfg.merge) tags.set(Condition::Merging);
  switch (std::min(cfg.occluded, 4)) {
    case 0: tags.set(Condition::Occ0); break;
    case 1: tags.set(Condition::Occ1); break;
    case 2: tags.set(Condition::Occ2); break;
    case 3: tags.set(Condition::Occ3); break;
    default: tags.set(Condition::Occ4to6); break;
  }
  return tags;
}

inline std::vector<LaneSpec> build_lanes(const SceneConfig& cfg, Rng& rng) {
  const int n = cfg.lane_count();
  std::vector<LaneSpec> lanes;
  lanes.reserve(static_cast<std::size_t>(n));
  for (int k = 1; k <= n; ++k) {
    LaneSpec lane;
    lane.class_id = k;
    lane.offset = cfg.offset_of_class(k);
    lane.width = cfg.mark_width;
    if (cfg.curve_radius != 0.0) {
      lane.kind = LaneSpec::Kind::Arc;
      lane.radius = cfg.curve_radius;
    }
    lanes.push_back(lane);
  }
  if (cfg.merge && n >= 2) {
    // rightmost lane joins (or splits from) its inner neighbor
    auto it = std::max_element(lanes.begin(), lanes.end(),
                               [](const LaneSpec& a, const LaneSpec& b) { return a.offset < b.offset; });
    double own = it->offset;
    double neighbor = own - cfg.lane_spacing;
    it->kind = LaneSpec::Kind::Merge;
    it->x_join = rng.uniform(0.5, 0.75) * cfg.grid.extent_x();
    if (cfg.merge_diverge) {
      it->offset = neighbor;
      it->merge_to = own;
    } else {
      it->offset = own;
      it->merge_to = neighbor;
    }
  }
  return lanes;
}

struct Frame {
  PointCloud cloud;
  LabelRaster label;
  ConditionTags tags;
  std::uint64_t seed = 0;
  SceneConfig config;
};

namespace detail {

inline float clamp255(double v) { return static_cast<float>(std::clamp(v, 0.0, 255.0)); }

}  // namespace detail

// Synthesizes one frame: high-intensity mark points along each lane line,
// low-intensity surface clutter, an optional bright ground patch (the night
// proxy), and occlusion boxes that delete points over the chosen lanes.
// Pure in (config, seed).
inline Frame generate_frame(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng root(Rng::mix(seed, 0x4c414e45));  // frame-level key
  Rng rng_lanes = root.fork(1);
  Rng rng_marks = root.fork(2);
  Rng rng_clutter = root.fork(3);
  Rng rng_patch = root.fork(4);
  Rng rng_occl = root.fork(5);

  Frame frame;
  frame.seed = seed;
  frame.config = cfg;
  frame.tags = annotate_conditions(cfg);

  std::vector<LaneSpec> lanes = build_lanes(cfg, rng_lanes);
  frame.label = rasterize_label(lanes, cfg.grid);

  const GridSpec& g = cfg.grid;
  const int n_lanes = static_cast<int>(lanes.size());
  const int mark_total = cfg.points * 3 / 10;
  const int per_lane = n_lanes > 0 ? mark_total / n_lanes : 0;
  const int patch_count = cfg.night ? cfg.points / 20 : 0;
  const int clutter_count = std::max(0, cfg.points - per_lane * n_lanes - patch_count);

  auto& pts = frame.cloud.points;
  pts.reserve(static_cast<std::size_t>(cfg.points));

  for (const auto& lane : lanes) {
    for (int i = 0; i < per_lane; ++i) {
      double x = rng_marks.uniform(g.x0, g.x1());
      auto yc = lane.lateral(x);
      if (!yc) continue;
      Point p;
      p.x = static_cast<float>(x);
      p.y = static_cast<float>(*yc + rng_marks.normal(0.0, lane.width / 4.0));
      p.z = static_cast<float>(rng_marks.normal(0.0, 0.01));
      p.intensity = detail::clamp255(rng_marks.normal(200.0, 15.0));
      p.reflectivity = detail::clamp255(rng_marks.normal(200.0, 15.0));
      pts.push_back(p);
    }
  }

  if (patch_count > 0) {
    double cx = rng_patch.uniform(0.2, 0.8) * g.extent_x() + g.x0;
    double cy = rng_patch.uniform(g.y0 + 1.5, g.y1() - 1.5);
    for (int i = 0; i < patch_count; ++i) {
      double ang = rng_patch.uniform(0.0, 6.283185307179586);
      double rad = 1.5 * std::sqrt(rng_patch.uniform());
      Point p;
      p.x = static_cast<float>(cx + rad * std::cos(ang));
      p.y = static_cast<float>(cy + rad * std::sin(ang));
      p.z = static_cast<float>(rng_patch.normal(0.0, 0.01));
      p.intensity = detail::clamp255(rng_patch.normal(200.0, 15.0));
      p.reflectivity = detail::clamp255(rng_patch.normal(200.0, 15.0));
      pts.push_back(p);
    }
  }

  for (int i = 0; i < clutter_count; ++i) {
    Point p;
    p.x = static_cast<float>(rng_clutter.uniform(g.x0, g.x1()));
    p.y = static_cast<float>(rng_clutter.uniform(g.y0, g.y1()));
    p.z = static_cast<float>(rng_clutter.normal(0.2, 0.3));
    p.intensity = detail::clamp255(rng_clutter.normal(40.0, 15.0));
    p.reflectivity = detail::clamp255(rng_clutter.normal(40.0, 15.0));
    pts.push_back(p);
  }

  if (cfg.occluded > 0) {
    std::vector<int> order(static_cast<std::size_t>(n_lanes));
    for (int i = 0; i < n_lanes; ++i) order[static_cast<std::size_t>(i)] = i;
    rng_occl.shuffle(order.begin(), order.end());
    constexpr double kBoxHalfLen = 4.5 / 2.0;
    constexpr double kBoxHalfWidth = 1.9 / 2.0;
    constexpr int kBoxesPerLane = 6;  // dense traffic: most of an occluded lane disappears
    for (int oi = 0; oi < cfg.occluded; ++oi) {
      const LaneSpec& lane = lanes[static_cast<std::size_t>(order[static_cast<std::size_t>(oi)])];
      const double stratum = g.extent_x() / kBoxesPerLane;
      for (int box = 0; box < kBoxesPerLane; ++box) {
        double lo = g.x0 + box * stratum;
        double hi = lo + stratum;
        double cx = rng_occl.uniform(lo + kBoxHalfLen, hi - kBoxHalfLen);
        auto cyc = lane.lateral(cx);
        if (!cyc) continue;
        double cy = *cyc;
        std::erase_if(pts, [&](const Point& p) {
          return std::abs(p.x - cx) <= kBoxHalfLen && std::abs(p.y - cy) <= kBoxHalfWidth;
        });
      }
    }
  }

  return frame;
}

// ---- generation schedule -----------------------------------------------------

// Round-robin schedule for dataset generation; guarantees every occlusion
// bucket appears within any 7 consecutive frames of the default profile.
inline SceneConfig scheduled_config(const std::string& profile, int index, const GridSpec& grid,
                                    int points, std::uint64_t dataset_seed) {
  SceneConfig cfg;
  cfg.grid = grid;
  cfg.points = points;
  if (profile == "straight") {
    cfg.lanes = 2 + index % 3;  // 2..4
    return cfg;
  }
  if (profile != "default")
    throw ConfigError("unknown generation profile '" + profile + "' (expected default|straight)");

  static constexpr int occ_cycle[7] = {0, 1, 2, 3, 4, 5, 6};
  static constexpr int lane_cycle[7] = {2, 4, 3, 5, 6, 5, 6};
  cfg.occluded = occ_cycle[index % 7];
  cfg.lanes = std::max(lane_cycle[index % 7], cfg.occluded);

  Rng jitter(Rng::mix(dataset_seed, 0x5343 + static_cast<std::uint64_t>(index)));
  switch (index % 5) {
    case 0:
    case 2:
      break;  // straight
    case 1:
      cfg.curve_radius = jitter.uniform(200.0, 400.0) * (jitter.uniform() < 0.5 ? -1.0 : 1.0);
      break;
    case 3:
      cfg.curve_radius = jitter.uniform(60.0, 150.0) * (jitter.uniform() < 0.5 ? -1.0 : 1.0);
      break;
    case 4:
      cfg.merge = true;
      cfg.merge_diverge = jitter.uniform() < 0.5;
      break;
  }
  cfg.night = index % 3 == 2;
  return cfg;
}

}  // namespace lldn
