#pragma once

#include <cmath>
#include <cstdint>

#include "lldn/errors.hpp"

namespace lldn {

// BEV grid: rows follow x (longitudinal, ahead of the sensor), columns follow
// y (lateral). Cell (r, c) covers [x0 + r*dx, x0 + (r+1)*dx) x [y0 + c*dy, ...).
struct GridSpec {
  int rows = 32;
  int cols = 32;
  double cell_dx = 0.96;
  double cell_dy = 0.48;
  double x0 = 0.0;
  double y0 = -7.68;

  double extent_x() const { return rows * cell_dx; }
  double extent_y() const { return cols * cell_dy; }
  double x1() const { return x0 + extent_x(); }
  double y1() const { return y0 + extent_y(); }

  // boundary points land in the higher cell: floor((v - origin) / step)
  int row_of(double x) const { return static_cast<int>(std::floor((x - x0) / cell_dx)); }
  int col_of(double y) const { return static_cast<int>(std::floor((y - y0) / cell_dy)); }

  double row_center(int r) const { return x0 + (r + 0.5) * cell_dx; }
  double col_center(int c) const { return y0 + (c + 0.5) * cell_dy; }

  bool in_bounds(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }

  bool operator==(const GridSpec&) const = default;

  void validate() const {
    if (rows <= 0 || cols <= 0 || cell_dx <= 0 || cell_dy <= 0)
      throw ConfigError("grid: rows/cols and cell sizes must be positive");
  }

  // Fine raster for the point projector: 8x the label grid per axis, so the
  // 1/8^2 CNN lands exactly back on the label grid.
  GridSpec refined(int factor = 8) const {
    GridSpec g = *this;
    g.rows *= factor;
    g.cols *= factor;
    g.cell_dx /= factor;
    g.cell_dy /= factor;
    return g;
  }
};

}  // namespace lldn
