#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "lldn/grid.hpp"
#include "lldn/scene.hpp"
#include "lldn/tape.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

// Fixed channel scaling used by both encoders: z to [-2, 4] m,
// intensity/reflectivity to [0, 255]; all clamped to [0, 1].
inline double scale_z(double z) { return std::clamp((z + 2.0) / 6.0, 0.0, 1.0); }
inline double scale_intensity(double v) { return std::clamp(v / 255.0, 0.0, 1.0); }

// ---- point projector --------------------------------------------------------

// Projects the cloud onto the fine raster; channels are per-cell maxima of
// (z, intensity, reflectivity), scaled to [0,1]. Empty cells stay all-zero.
template <typename T>
Tensor<T> project_points(const PointCloud& cloud, const GridSpec& grid) {
  Tensor<T> img(Shape{grid.rows, grid.cols, 3});
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
  std::vector<float> zmax(occupied.size()), imax(occupied.size()), rmax(occupied.size());
  for (const Point& p : cloud.points) {
    int r = grid.row_of(p.x);
    int c = grid.col_of(p.y);
    if (!grid.in_bounds(r, c)) continue;
    std::size_t idx = static_cast<std::size_t>(r) * grid.cols + c;
    if (!occupied[idx]) {
      occupied[idx] = 1;
      zmax[idx] = p.z;
      imax[idx] = p.intensity;
      rmax[idx] = p.reflectivity;
    } else {
      zmax[idx] = std::max(zmax[idx], p.z);
      imax[idx] = std::max(imax[idx], p.intensity);
      rmax[idx] = std::max(rmax[idx], p.reflectivity);
    }
  }
  for (std::size_t i = 0; i < occupied.size(); ++i) {
    if (!occupied[i]) continue;
    img.at(static_cast<std::int64_t>(3 * i + 0)) = static_cast<T>(scale_z(zmax[i]));
    img.at(static_cast<std::int64_t>(3 * i + 1)) = static_cast<T>(scale_intensity(imax[i]));
    img.at(static_cast<std::int64_t>(3 * i + 2)) = static_cast<T>(scale_intensity(rmax[i]));
  }
  return img;
}

template <typename T>
struct ConvLayer {
  Tensor<T> w, b;

  void init(int k, int c_in, int c_out, Rng& rng) {
    w = Tensor<T>::glorot(Shape{k, k, c_in, c_out}, k * k * c_in, k * k * c_out, rng);
    b = Tensor<T>(Shape{c_out});
  }
};

// Residual CNN reducing the fine raster to the label grid: three stages of
// (stride-2 conv, then a two-conv residual unit), 1/8 spatial per axis total.
template <typename T>
struct ProjectorCnn {
  struct Stage {
    ConvLayer<T> down, c1, c2;
  };
  std::array<Stage, 3> stages;
  int c_out = 64;

  void init(int c_bev_out, Rng& rng, std::array<int, 2> mid_widths = {16, 32}) {
    c_out = c_bev_out;
    const std::array<int, 4> widths{3, mid_widths[0], mid_widths[1], c_bev_out};
    for (int s = 0; s < 3; ++s) {
      stages[static_cast<std::size_t>(s)].down.init(3, widths[static_cast<std::size_t>(s)], widths[static_cast<std::size_t>(s) + 1], rng);
      stages[static_cast<std::size_t>(s)].c1.init(3, widths[static_cast<std::size_t>(s) + 1], widths[static_cast<std::size_t>(s) + 1], rng);
      stages[static_cast<std::size_t>(s)].c2.init(3, widths[static_cast<std::size_t>(s) + 1], widths[static_cast<std::size_t>(s) + 1], rng);
    }
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    for (int s = 0; s < 3; ++s) {
      auto& st = stages[static_cast<std::size_t>(s)];
      std::string base = prefix + ".stage" + std::to_string(s);
      out.emplace_back(base + ".down.w", st.down.w);
      out.emplace_back(base + ".down.b", st.down.b);
      out.emplace_back(base + ".c1.w", st.c1.w);
      out.emplace_back(base + ".c1.b", st.c1.b);
      out.emplace_back(base + ".c2.w", st.c2.w);
      out.emplace_back(base + ".c2.b", st.c2.b);
    }
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    if (x.dim(0) % 8 != 0 || x.dim(1) % 8 != 0)
      throw OpError("projector cnn: input dims " + shape_str(x.shape()) + " not divisible by 8");
    Tensor<T> h = x;
    for (const auto& st : stages) {
      h = tape.relu(tape.add(tape.conv2d(h, st.down.w, 2, 1, 1), st.down.b));
      Tensor<T> r = tape.relu(tape.add(tape.conv2d(h, st.c1.w, 1, 1, 1), st.c1.b));
      r = tape.add(tape.conv2d(r, st.c2.w, 1, 1, 1), st.c2.b);
      h = tape.relu(tape.add(h, r));
    }
    return h;
  }
};

// ---- pillar encoder ---------------------------------------------------------

// Stacked pillars as in the pillar-encoder input: a dense [N_g, N_c, N_p]
// array (N_c = 7 point feature components) plus per-pillar occupancy counts.
// Feature components are scaled to unit ranges: x, y by the grid extent,
// z/intensity/reflectivity by the fixed channel ranges, offsets by cell size.
template <typename T>
struct StackedPillars {
  static constexpr int kComponents = 7;
  GridSpec grid;
  int n_p = 16;
  Tensor<T> features;       // [N_g, N_c, N_p]
  std::vector<int> counts;  // occupancy per pillar

  std::int64_t num_pillars() const { return static_cast<std::int64_t>(grid.rows) * grid.cols; }
};

template <typename T>
StackedPillars<T> pillarize(const PointCloud& cloud, const GridSpec& grid, int n_p) {
  if (n_p < 1) throw OpError("pillarize: N_p must be >= 1");
  StackedPillars<T> out;
  out.grid = grid;
  out.n_p = n_p;
  const std::int64_t n_g = out.num_pillars();
  out.features = Tensor<T>(Shape{static_cast<int>(n_g), StackedPillars<T>::kComponents, n_p});
  out.counts.assign(static_cast<std::size_t>(n_g), 0);
  for (const Point& p : cloud.points) {
    int r = grid.row_of(p.x);
    int c = grid.col_of(p.y);
    if (!grid.in_bounds(r, c)) continue;
    std::size_t g = static_cast<std::size_t>(r) * grid.cols + c;
    int slot = out.counts[g];
    if (slot >= n_p) continue;  // keep the first N_p points in input order
    ++out.counts[g];
    const double f[StackedPillars<T>::kComponents] = {
        (p.x - grid.x0) / grid.extent_x(),
        (p.y - grid.y0) / grid.extent_y(),
        scale_z(p.z),
        scale_intensity(p.intensity),
        scale_intensity(p.reflectivity),
        (p.x - grid.row_center(r)) / grid.cell_dx,
        (p.y - grid.col_center(c)) / grid.cell_dy,
    };
    for (int k = 0; k < StackedPillars<T>::kComponents; ++k)
      out.features.at((static_cast<std::int64_t>(g) * StackedPillars<T>::kComponents + k) * n_p + slot) =
          static_cast<T>(f[k]);
  }
  return out;
}

// Shared MLP of size N_c x C applied per point, ReLU, then max over the
// occupied slots of each pillar; empty pillars produce the zero vector.
template <typename T>
struct PillarEncoder {
  Tensor<T> w, b;
  int channels = 64;

  void init(int c, Rng& rng) {
    channels = c;
    w = Tensor<T>::glorot(Shape{StackedPillars<T>::kComponents, c}, StackedPillars<T>::kComponents, c, rng);
    b = Tensor<T>(Shape{c});
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }

  // -> [rows, cols, C]
  Tensor<T> forward(Tape<T>& tape, const StackedPillars<T>& pillars) const {
    if (w.dim(0) != StackedPillars<T>::kComponents)
      throw OpError("pillar encoder: weight shape " + shape_str(w.shape()) + " does not match N_c");
    const int n_g = static_cast<int>(pillars.num_pillars());
    const int n_p = pillars.n_p;
    const int n_c = StackedPillars<T>::kComponents;
    // repack [N_g, N_c, N_p] -> [N_g * N_p, N_c] (plain data movement)
    Tensor<T> flat(Shape{n_g * n_p, n_c});
    for (int g = 0; g < n_g; ++g)
      for (int k = 0; k < n_c; ++k)
        for (int s = 0; s < n_p; ++s)
          flat.at((static_cast<std::int64_t>(g) * n_p + s) * n_c + k) =
              pillars.features.at((static_cast<std::int64_t>(g) * n_c + k) * n_p + s);
    // mask keeps only occupied slots; ReLU outputs are >= 0, so max over
    // masked slots equals max over occupied slots, and empty pillars pool to 0
    Tensor<T> mask(Shape{n_g, n_p, channels});
    for (int g = 0; g < n_g; ++g)
      for (int s = 0; s < pillars.counts[static_cast<std::size_t>(g)]; ++s)
        for (int c = 0; c < channels; ++c)
          mask.at((static_cast<std::int64_t>(g) * n_p + s) * channels + c) = T(1);

    Tensor<T> h = tape.relu(tape.add(tape.matmul(flat, w), b));
    h = tape.reshape(h, Shape{n_g, n_p, channels});
    h = tape.max_reduce(tape.mul(h, mask), 1);
    return tape.reshape(h, Shape{pillars.grid.rows, pillars.grid.cols, channels});
  }
};

}  // namespace lldn
