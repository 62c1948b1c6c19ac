#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/scene.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

// portable graymap, binary variant (P5), expects values in [0,1]
inline void write_pgm(const std::vector<double>& gray, int rows, int cols,
                      const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : gray)
    os.put(static_cast<char>(std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255)));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

// portable pixmap, binary variant (P6), rgb triples in [0,1]
inline void write_ppm(const std::vector<double>& rgb, int rows, int cols,
                      const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "P6\n" << cols << " " << rows << "\n255\n";
  for (double v : rgb)
    os.put(static_cast<char>(std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255)));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

// one channel of an [H, W, C] activation map, min-max normalized
template <typename T>
std::vector<double> heatmap_channel(const Tensor<T>& act, int channel) {
  const int H = act.dim(0), W = act.dim(1), C = act.dim(2);
  if (channel < 0 || channel >= C) throw ConfigError("heatmap channel out of range");
  std::vector<double> out(static_cast<std::size_t>(H) * W);
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(act.at(static_cast<std::int64_t>(i) * C + channel));
    out[i] = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  for (auto& v : out) v = span > 0 ? (v - lo) / span : 0.0;
  return out;
}

// the BEV intensity raster at label resolution, used as the overlay backdrop
inline std::vector<double> intensity_raster(const Frame& frame) {
  const GridSpec& g = frame.label.grid;
  std::vector<double> out(static_cast<std::size_t>(g.rows) * g.cols, 0.0);
  for (const Point& p : frame.cloud.points) {
    int r = g.row_of(p.x), c = g.col_of(p.y);
    if (!g.in_bounds(r, c)) continue;
    std::size_t i = static_cast<std::size_t>(r) * g.cols + c;
    out[i] = std::max(out[i], static_cast<double>(p.intensity) / 255.0);
  }
  return out;
}

// One query row of an attention record [heads, N, N] rendered over the BEV
// intensity raster: the row is reshaped to the patch grid, upsampled to the
// label grid, and tinted over the backdrop. The row must be a probability
// vector; that is asserted before normalization.
template <typename T>
std::vector<double> attention_overlay(const Tensor<T>& record, int head, int query,
                                      int patches_h, int patches_w, const Frame& frame) {
  const int n = record.dim(1);
  if (head < 0 || head >= record.dim(0)) throw ConfigError("attention head out of range");
  if (query < 0 || query >= n) throw ConfigError("attention query index out of range");
  if (patches_h * patches_w != n) throw ConfigError("patch grid does not match attention size");
  std::vector<double> row(static_cast<std::size_t>(n));
  double sum = 0.0, peak = 0.0;
  for (int j = 0; j < n; ++j) {
    row[static_cast<std::size_t>(j)] =
        static_cast<double>(record.at((static_cast<std::int64_t>(head) * n + query) * n + j));
    sum += row[static_cast<std::size_t>(j)];
    peak = std::max(peak, row[static_cast<std::size_t>(j)]);
  }
  if (std::abs(sum - 1.0) > 1e-6) throw NumericError("attention row does not sum to 1");

  const GridSpec& g = frame.label.grid;
  std::vector<double> gray = intensity_raster(frame);
  std::vector<double> rgb(gray.size() * 3);
  const int tile_h = g.rows / patches_h, tile_w = g.cols / patches_w;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      int p = (r / tile_h) * patches_w + (c / tile_w);
      double a = peak > 0 ? row[static_cast<std::size_t>(p)] / peak : 0.0;
      double v = gray[static_cast<std::size_t>(r) * g.cols + c];
      std::size_t base = (static_cast<std::size_t>(r) * g.cols + c) * 3;
      rgb[base + 0] = std::max(v, a);              // attention shows up purple
      rgb[base + 1] = v * (1.0 - 0.6 * a);
      rgb[base + 2] = std::max(v, 0.8 * a);
    }
  return rgb;
}

}  // namespace lldn
