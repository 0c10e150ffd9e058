#pragma once

// Self-contained SVG artifacts: iso-lines by marching squares and stacked
// line panels.

#include <iosfwd>
#include <string>
#include <vector>

namespace iontrap::plot {

/// Samples on a regular nx x ny grid over [x0, x1] x [y0, y1], row-major in
/// x (value(i, j) = values[j * nx + i]). NaN marks points outside the field
/// region; cells touching one are skipped.
struct Grid {
  int nx = 0, ny = 0;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  std::vector<double> values;

  double x(int i) const { return x0 + (x1 - x0) * i / (nx - 1); }
  double y(int j) const { return y0 + (y1 - y0) * j / (ny - 1); }
  double at(int i, int j) const { return values[static_cast<std::size_t>(j) * nx + i]; }
};

struct Segment {
  double xa, ya, xb, yb;
};

/// Iso-line of `level` as unordered segments with linearly interpolated
/// endpoints. Saddle cells are split by the cell-centre average.
std::vector<Segment> contour(const Grid& grid, double level);

struct Series {
  std::string name;
  std::vector<double> values;
};

struct Panel {
  std::string title;
  std::vector<Series> series;
  /// Horizontal reference lines (drawn dashed).
  std::vector<double> guides;
};

/// Contour plot: one path per level, coloured from low (blue) to high (red).
/// `markers` are (x, y) points drawn as circles; `hlines` are y values drawn
/// across the plot (electrode planes).
void write_contour_svg(std::ostream& out, const Grid& grid, const std::vector<double>& levels,
                       const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<std::pair<double, double>>& markers, const std::vector<double>& hlines);

/// Panels stacked vertically sharing the step axis 0..n-1.
void write_strip_svg(std::ostream& out, const std::vector<Panel>& panels, const std::string& x_label);

}  // namespace iontrap::plot
