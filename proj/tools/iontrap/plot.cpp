#include "plot.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace iontrap::plot {

namespace {

struct Point {
  double x, y;
};

// Corner order: (i,j) (i+1,j) (i+1,j+1) (i,j+1); edge k joins corner k and k+1.
constexpr std::array<std::array<int, 4>, 16> kEdges{{
    {-1, -1, -1, -1}, {3, 0, -1, -1}, {0, 1, -1, -1}, {3, 1, -1, -1},
    {1, 2, -1, -1},   {-1, -1, -1, -1}, {0, 2, -1, -1}, {3, 2, -1, -1},
    {2, 3, -1, -1},   {0, 2, -1, -1}, {-1, -1, -1, -1}, {1, 2, -1, -1},
    {1, 3, -1, -1},   {0, 1, -1, -1}, {0, 3, -1, -1}, {-1, -1, -1, -1},
}};

std::string colour(double t) {
  const int r = static_cast<int>(std::lround(40 + 200 * t));
  const int b = static_cast<int>(std::lround(240 - 200 * t));
  return fmt::format("rgb({},60,{})", r, b);
}

void svg_open(std::ostream& out, double w, double h) {
  fmt::print(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n",
             w, h, w, h);
  fmt::print(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
}

void text(std::ostream& out, double x, double y, const std::string& s, const char* anchor = "middle", int size = 12) {
  fmt::print(out, "<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"{}\" text-anchor=\"{}\">{}</text>\n",
             x, y, size, anchor, s);
}

}  // namespace

std::vector<Segment> contour(const Grid& g, double level) {
  if (g.nx < 2 || g.ny < 2 || g.values.size() != static_cast<std::size_t>(g.nx) * g.ny)
    throw std::invalid_argument("contour: grid needs at least 2 x 2 samples matching nx * ny");
  std::vector<Segment> segments;
  for (int j = 0; j + 1 < g.ny; ++j) {
    for (int i = 0; i + 1 < g.nx; ++i) {
      const std::array<double, 4> v{g.at(i, j), g.at(i + 1, j), g.at(i + 1, j + 1), g.at(i, j + 1)};
      if (std::any_of(v.begin(), v.end(), [](double a) { return std::isnan(a); })) continue;
      const std::array<Point, 4> c{Point{g.x(i), g.y(j)}, Point{g.x(i + 1), g.y(j)}, Point{g.x(i + 1), g.y(j + 1)},
                                   Point{g.x(i), g.y(j + 1)}};
      int index = 0;
      for (int k = 0; k < 4; ++k)
        if (v[k] > level) index |= 1 << k;
      auto edge_point = [&](int e) {
        const int a = e, b = (e + 1) % 4;
        const double t = (level - v[a]) / (v[b] - v[a]);
        return Point{c[a].x + t * (c[b].x - c[a].x), c[a].y + t * (c[b].y - c[a].y)};
      };
      auto emit = [&](int ea, int eb) {
        const Point p = edge_point(ea), q = edge_point(eb);
        // A corner exactly on the level collapses a segment to a point.
        if (p.x != q.x || p.y != q.y) segments.push_back({p.x, p.y, q.x, q.y});
      };
      if (index == 5 || index == 10) {
        const bool centre_above = 0.25 * (v[0] + v[1] + v[2] + v[3]) > level;
        // The centre joins the corners that share its side.
        if ((index == 5) == centre_above) {
          emit(0, 1);
          emit(2, 3);
        } else {
          emit(3, 0);
          emit(1, 2);
        }
        continue;
      }
      const auto& e = kEdges[index];
      if (e[0] >= 0) emit(e[0], e[1]);
    }
  }
  return segments;
}

void write_contour_svg(std::ostream& out, const Grid& g, const std::vector<double>& levels, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<std::pair<double, double>>& markers, const std::vector<double>& hlines) {
  const double margin = 70, plot_w = 560;
  const double aspect = (g.y1 - g.y0) / (g.x1 - g.x0);
  const double plot_h = std::clamp(plot_w * aspect, 120.0, 900.0);
  const double w = plot_w + 2 * margin, h = plot_h + 2 * margin;
  auto px = [&](double x) { return margin + (x - g.x0) / (g.x1 - g.x0) * plot_w; };
  auto py = [&](double y) { return margin + plot_h - (y - g.y0) / (g.y1 - g.y0) * plot_h; };

  svg_open(out, w, h);
  text(out, w / 2, margin / 2, title, "middle", 14);
  fmt::print(out, "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
             margin, margin, plot_w, plot_h);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const double t = levels.size() > 1 ? static_cast<double>(k) / (levels.size() - 1) : 0.0;
    const auto segs = contour(g, levels[k]);
    if (segs.empty()) continue;
    fmt::print(out, "<path fill=\"none\" stroke=\"{}\" stroke-width=\"1\" data-level=\"{:.6g}\" d=\"", colour(t),
               levels[k]);
    for (const auto& s : segs)
      fmt::print(out, "M{:.2f} {:.2f}L{:.2f} {:.2f}", px(s.xa), py(s.ya), px(s.xb), py(s.yb));
    fmt::print(out, "\"/>\n");
  }
  for (double y : hlines) {
    if (y < g.y0 || y > g.y1) continue;
    fmt::print(out, "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"goldenrod\" stroke-width=\"3\"/>\n",
               margin, py(y), margin + plot_w, py(y));
  }
  for (const auto& [x, y] : markers)
    fmt::print(out, "<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"black\"/>\n", px(x), py(y));
  text(out, margin, margin + plot_h + 18, fmt::format("{:.4g}", g.x0));
  text(out, margin + plot_w, margin + plot_h + 18, fmt::format("{:.4g}", g.x1));
  text(out, margin - 6, margin + plot_h, fmt::format("{:.4g}", g.y0), "end");
  text(out, margin - 6, margin + 4, fmt::format("{:.4g}", g.y1), "end");
  text(out, margin + plot_w / 2, margin + plot_h + 40, x_label);
  fmt::print(out, "<text x=\"18\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
                  "transform=\"rotate(-90 18 {:.1f})\">{}</text>\n",
             margin + plot_h / 2, margin + plot_h / 2, y_label);
  fmt::print(out, "</svg>\n");
}

void write_strip_svg(std::ostream& out, const std::vector<Panel>& panels, const std::string& x_label) {
  const double margin_l = 80, margin_r = 150, plot_w = 640, panel_h = 160, gap = 50, top = 30;
  const double w = margin_l + plot_w + margin_r;
  const double h = top + panels.size() * (panel_h + gap) + 20;
  svg_open(out, w, h);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double y_top = top + p * (panel_h + gap);
    std::size_t n = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : panel.series) {
      n = std::max(n, s.values.size());
      for (double v : s.values)
        if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    for (double gline : panel.guides) lo = std::min(lo, gline), hi = std::max(hi, gline);
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) lo -= 0.5, hi += 0.5;
    const double steps = n > 1 ? static_cast<double>(n - 1) : 1.0;
    auto px = [&](double k) { return margin_l + k / steps * plot_w; };
    auto py = [&](double v) { return y_top + panel_h - (v - lo) / (hi - lo) * panel_h; };

    text(out, margin_l, y_top - 8, panel.title, "start", 13);
    fmt::print(out, "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
               margin_l, y_top, plot_w, panel_h);
    auto tick = [&](double v) { return fmt::format("{:.5g}", std::abs(v) < 1e-9 * (hi - lo) ? 0.0 : v); };
    text(out, margin_l - 6, y_top + 10, tick(hi), "end", 11);
    text(out, margin_l - 6, y_top + panel_h, tick(lo), "end", 11);
    for (double gline : panel.guides)
      fmt::print(out, "<line x1=\"{:.1f}\" y1=\"{:.2f}\" x2=\"{:.1f}\" y2=\"{:.2f}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
                 margin_l, py(gline), margin_l + plot_w, py(gline));
    for (std::size_t s = 0; s < panel.series.size(); ++s) {
      const auto& series = panel.series[s];
      const double t = panel.series.size() > 1 ? static_cast<double>(s) / (panel.series.size() - 1) : 0.0;
      fmt::print(out, "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"", colour(t));
      for (std::size_t k = 0; k < series.values.size(); ++k)
        if (std::isfinite(series.values[k])) fmt::print(out, "{:.2f},{:.2f} ", px(k), py(series.values[k]));
      fmt::print(out, "\"/>\n");
      const double row = std::min(12.0, (panel_h - 12) / static_cast<double>(panel.series.size()));
      if (!series.name.empty() && row >= 6) text(out, margin_l + plot_w + 8, y_top + 11 + row * s, series.name, "start", 10);
    }
    text(out, margin_l, y_top + panel_h + 14, "0", "middle", 11);
    text(out, margin_l + plot_w, y_top + panel_h + 14, fmt::format("{}", n > 0 ? n - 1 : 0), "middle", 11);
  }
  text(out, margin_l + plot_w / 2, h - 6, x_label);
  fmt::print(out, "</svg>\n");
}

}  // namespace iontrap::plot
