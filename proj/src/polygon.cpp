#include "iontrap/polygon.hpp"

#include "iontrap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace iontrap::polygon {

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double orient(const Vec2& a, const Vec2& b, const Vec2& c) { return cross(b - a, c - a); }

double scale_of(std::span<const Vec2> poly) {
  auto [lo, hi] = bounds(poly);
  return std::max((hi - lo).norm(), std::numeric_limits<double>::min());
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p, double eps) {
  return std::abs(orient(a, b, p)) <= eps && p.x() >= std::min(a.x(), b.x()) - std::sqrt(eps) &&
         p.x() <= std::max(a.x(), b.x()) + std::sqrt(eps) &&
         p.y() >= std::min(a.y(), b.y()) - std::sqrt(eps) &&
         p.y() <= std::max(a.y(), b.y()) + std::sqrt(eps);
}

// Closed-segment intersection test; `eps` is an area tolerance for orientation.
bool segments_touch(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d, double eps) {
  double o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  auto sgn = [eps](double v) { return v > eps ? 1 : (v < -eps ? -1 : 0); };
  int s1 = sgn(o1), s2 = sgn(o2), s3 = sgn(o3), s4 = sgn(o4);
  if (s1 * s2 < 0 && s3 * s4 < 0) return true;
  if (s1 == 0 && on_segment(a, b, c, eps)) return true;
  if (s2 == 0 && on_segment(a, b, d, eps)) return true;
  if (s3 == 0 && on_segment(c, d, a, eps)) return true;
  if (s4 == 0 && on_segment(c, d, b, eps)) return true;
  return false;
}

bool point_in_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  return orient(a, b, p) >= 0 && orient(b, c, p) >= 0 && orient(c, a, p) >= 0;
}

double distance_to_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
  Vec2 ab = b - a;
  double len2 = ab.squaredNorm();
  double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

}  // namespace

double signed_area(std::span<const Vec2> poly) {
  double s = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) s += cross(poly[i], poly[(i + 1) % n]);
  return 0.5 * s;
}

double area(std::span<const Vec2> poly) { return std::abs(signed_area(poly)); }

Vec2 centroid(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  // Shift to the first vertex to keep the cross products well conditioned.
  const Vec2 o = poly[0];
  double a2 = 0;
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 p = poly[i] - o, q = poly[(i + 1) % n] - o;
    double w = cross(p, q);
    a2 += w;
    c += w * (p + q);
  }
  if (a2 == 0) return o;
  return o + c / (3.0 * a2);
}

std::pair<Vec2, Vec2> bounds(std::span<const Vec2> poly) {
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (const auto& p : poly) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

bool is_simple(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  const double s = scale_of(poly);
  const double eps = 1e-14 * s * s;
  for (std::size_t i = 0; i < n; ++i) {
    if ((poly[(i + 1) % n] - poly[i]).norm() <= 1e-14 * s) return false;
  }
  if (area(poly) <= eps) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vec2& c = poly[j];
      const Vec2& d = poly[(j + 1) % n];
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) {
        // Shared vertex is fine; folding back onto the neighbour is not.
        const Vec2& shared = (j == i + 1) ? b : a;
        const Vec2& other_self = (j == i + 1) ? a : b;
        const Vec2& other_nb = (j == i + 1) ? d : c;
        if (std::abs(orient(shared, other_self, other_nb)) <= eps &&
            (other_self - shared).dot(other_nb - shared) > 0)
          return false;
        continue;
      }
      if (segments_touch(a, b, c, d, eps)) return false;
    }
  }
  return true;
}

Polygon to_ccw(std::span<const Vec2> poly) {
  Polygon out(poly.begin(), poly.end());
  if (signed_area(out) < 0) std::reverse(out.begin(), out.end());
  return out;
}

std::vector<Triangle> triangulate(std::span<const Vec2> poly) {
  Polygon p = to_ccw(poly);
  std::vector<Triangle> tris;
  std::vector<std::size_t> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const double s = scale_of(poly);
  const double eps = 1e-15 * s * s;

  std::size_t guard = 0;
  while (idx.size() > 3) {
    bool clipped = false;
    const std::size_t m = idx.size();
    for (std::size_t k = 0; k < m; ++k) {
      const Vec2& a = p[idx[(k + m - 1) % m]];
      const Vec2& b = p[idx[k]];
      const Vec2& c = p[idx[(k + 1) % m]];
      if (orient(a, b, c) <= eps) continue;  // reflex or degenerate
      bool ear = true;
      for (std::size_t j = 0; j < m && ear; ++j) {
        const std::size_t v = idx[j];
        if (v == idx[(k + m - 1) % m] || v == idx[k] || v == idx[(k + 1) % m]) continue;
        if (point_in_triangle(p[v], a, b, c)) ear = false;
      }
      if (!ear) continue;
      tris.push_back({a, b, c});
      idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(k));
      clipped = true;
      break;
    }
    if (!clipped) {
      // Collinear leftovers: drop a vertex with zero turn.
      bool dropped = false;
      for (std::size_t k = 0; k < m; ++k) {
        const Vec2& a = p[idx[(k + m - 1) % m]];
        const Vec2& b = p[idx[k]];
        const Vec2& c = p[idx[(k + 1) % m]];
        if (std::abs(orient(a, b, c)) <= eps) {
          idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(k));
          dropped = true;
          break;
        }
      }
      if (!dropped || ++guard > p.size()) throw NumericalError("triangulate: polygon is not simple");
    }
  }
  if (idx.size() == 3 && std::abs(orient(p[idx[0]], p[idx[1]], p[idx[2]])) > eps)
    tris.push_back({p[idx[0]], p[idx[1]], p[idx[2]]});
  return tris;
}

Polygon clip_convex(std::span<const Vec2> subject, std::span<const Vec2> convex_clip) {
  Polygon out(subject.begin(), subject.end());
  const std::size_t n = convex_clip.size();
  for (std::size_t i = 0; i < n && !out.empty(); ++i) {
    const Vec2& a = convex_clip[i];
    const Vec2& b = convex_clip[(i + 1) % n];
    Polygon in = std::move(out);
    out.clear();
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Vec2& p = in[k];
      const Vec2& q = in[(k + 1) % in.size()];
      double op = orient(a, b, p), oq = orient(a, b, q);
      if (op >= 0) out.push_back(p);
      if ((op >= 0) != (oq >= 0)) {
        double t = op / (op - oq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

double intersection_area(std::span<const Vec2> a, std::span<const Vec2> b) {
  auto [alo, ahi] = bounds(a);
  auto [blo, bhi] = bounds(b);
  if ((alo.array() >= bhi.array()).any() || (blo.array() >= ahi.array()).any()) return 0.0;
  const auto ta = triangulate(a);
  const auto tb = triangulate(b);
  double total = 0;
  for (const auto& t1 : ta) {
    for (const auto& t2 : tb) {
      Polygon clipped = clip_convex(t1, t2);
      if (clipped.size() >= 3) total += area(clipped);
    }
  }
  return total;
}

Polygon offset(std::span<const Vec2> poly, double distance) {
  Polygon p = to_ccw(poly);
  const std::size_t n = p.size();
  Polygon out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& prev = p[(i + n - 1) % n];
    const Vec2& cur = p[i];
    const Vec2& next = p[(i + 1) % n];
    Vec2 d1 = (cur - prev).normalized();
    Vec2 d2 = (next - cur).normalized();
    Vec2 n1(d1.y(), -d1.x());
    Vec2 n2(d2.y(), -d2.x());
    double denom = 1.0 + n1.dot(n2);
    if (denom < 1e-6) throw ValidationError("", "offset: polygon has a spike vertex");
    out[i] = cur + distance * (n1 + n2) / denom;
  }
  return out;
}

bool is_axis_aligned_rectangle(std::span<const Vec2> poly, double tol) {
  if (poly.size() != 4) return false;
  auto [lo, hi] = bounds(poly);
  const double s = std::max((hi - lo).norm(), 1e-300);
  for (const auto& v : poly) {
    bool on_x = std::abs(v.x() - lo.x()) <= tol * s || std::abs(v.x() - hi.x()) <= tol * s;
    bool on_y = std::abs(v.y() - lo.y()) <= tol * s || std::abs(v.y() - hi.y()) <= tol * s;
    if (!on_x || !on_y) return false;
  }
  return std::abs(area(poly) - (hi - lo).prod()) <= 1e-12 * (hi - lo).prod();
}

bool contains(std::span<const Vec2> poly, const Vec2& p) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

double distance_3d(std::span<const Vec2> poly, double plane_z, const Vec3& p) {
  const Vec2 q(p.x(), p.y());
  const double dz = p.z() - plane_z;
  if (contains(poly, q)) return std::abs(dz);
  double d = std::numeric_limits<double>::infinity();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) d = std::min(d, distance_to_segment(poly[i], poly[(i + 1) % n], q));
  return std::hypot(d, dz);
}

}  // namespace iontrap::polygon
