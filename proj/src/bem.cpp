#include "iontrap/bem.hpp"

#include "iontrap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace iontrap::bem {

namespace {

void push_panel(std::vector<Panel>& out, Polygon verts, double z, std::size_t owner) {
  Panel p;
  p.centroid = polygon::centroid(verts);
  p.area = polygon::area(verts);
  p.vertices = std::move(verts);
  p.plane_z = z;
  p.owner = owner;
  out.push_back(std::move(p));
}

struct Segment {
  Vec2 a, b;
};

double distance_to_segment(const Segment& s, const Vec2& p) {
  const Vec2 ab = s.b - s.a;
  const double t = std::clamp((p - s.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (s.a + t * ab - p).norm();
}

double interval_gap(double a0, double a1, double b0, double b1) {
  return std::max({0.0, std::min(a0, a1) - b1, b0 - std::max(a0, a1)});
}

// Distance from the box [lo, hi] to the segment. Exact for axis-aligned
// segments, a lower bound otherwise.
double distance_to_box(const Segment& s, const Vec2& lo, const Vec2& hi) {
  const Vec2 t = s.b - s.a;
  if (t.x() == 0.0 || t.y() == 0.0)
    return std::hypot(interval_gap(s.a.x(), s.b.x(), lo.x(), hi.x()), interval_gap(s.a.y(), s.b.y(), lo.y(), hi.y()));
  return std::max(0.0, distance_to_segment(s, 0.5 * (lo + hi)) - 0.5 * (hi - lo).norm());
}

class Mesher {
 public:
  Mesher(const ElectrodeLayout& layout, const SizeField& field) : field_(field) {
    for (const auto& e : layout.electrodes()) {
      auto& segs = edges_[e.plane_z];
      for (const auto& poly : e.polygons)
        for (std::size_t i = 0; i < poly.size(); ++i) segs.push_back({poly[i], poly[(i + 1) % poly.size()]});
    }
  }

  // Allowed cell size across x and across y for the box [lo, hi], taken at
  // the box point nearest each edge. An edge parallel to one axis only
  // limits the cell size across it, so cells along an edge come out thin
  // and long.
  Vec2 target(double z, const Vec2& lo, const Vec2& hi) const {
    double dx = std::numeric_limits<double>::infinity(), dy = dx;
    for (const auto& s : edges_.at(z)) {
      const double d = distance_to_box(s, lo, hi);
      const Vec2 t = s.b - s.a;
      const double tol = 1e-12 * t.norm();
      if (std::abs(t.x()) > tol || std::abs(t.y()) <= tol) dy = std::min(dy, d);  // not vertical
      if (std::abs(t.y()) > tol || std::abs(t.x()) <= tol) dx = std::min(dx, d);  // not horizontal
    }
    const Vec2 nearest = field_.focus.cwiseMax(lo).cwiseMin(hi);
    const double outside = std::max(0.0, (nearest - field_.focus).norm() - field_.focus_radius);
    const double stretch = 1.0 + field_.focus_weight * outside / std::max(field_.focus_radius, field_.min_size);
    const double cap = outside > 0 ? field_.max_size : std::min(field_.max_size, field_.focus_max_size);
    auto clamp = [&](double d) { return std::min(std::max(field_.min_size, field_.grading * d) * stretch, cap); };
    return {clamp(dx), clamp(dy)};
  }

  double isotropic_target(double z, const Vec2& lo, const Vec2& hi) const { return target(z, lo, hi).minCoeff(); }

  void rectangle(std::vector<Panel>& out, Vec2 lo, Vec2 hi, double z, std::size_t owner, bool force) const {
    const Vec2 len = hi - lo;
    const Vec2 t = target(z, lo, hi);
    // Aspect ratio stays bounded so collocation stays well conditioned.
    const bool split_x = force || len.x() > t.x() || len.x() > kMaxAspect * len.y();
    const bool split_y = force || len.y() > t.y() || len.y() > kMaxAspect * len.x();
    if (!split_x && !split_y) {
      push_panel(out, {lo, {hi.x(), lo.y()}, hi, {lo.x(), hi.y()}}, z, owner);
      return;
    }
    const double mx = split_x ? 0.5 * (lo.x() + hi.x()) : hi.x();
    const double my = split_y ? 0.5 * (lo.y() + hi.y()) : hi.y();
    rectangle(out, lo, {mx, my}, z, owner, false);
    if (split_x) rectangle(out, {mx, lo.y()}, {hi.x(), my}, z, owner, false);
    if (split_y) rectangle(out, {lo.x(), my}, {mx, hi.y()}, z, owner, false);
    if (split_x && split_y) rectangle(out, {mx, my}, hi, z, owner, false);
  }

  void triangle(std::vector<Panel>& out, const Vec2& a, const Vec2& b, const Vec2& c, double z, std::size_t owner,
                bool force) const {
    const double longest = std::max({(b - a).norm(), (c - b).norm(), (a - c).norm()});
    const Vec2 lo = a.cwiseMin(b).cwiseMin(c), hi = a.cwiseMax(b).cwiseMax(c);
    if (!force && longest <= isotropic_target(z, lo, hi)) {
      push_panel(out, {a, b, c}, z, owner);
      return;
    }
    const Vec2 ab = 0.5 * (a + b), bc = 0.5 * (b + c), ca = 0.5 * (c + a);
    triangle(out, a, ab, ca, z, owner, false);
    triangle(out, ab, b, bc, z, owner, false);
    triangle(out, ca, bc, c, z, owner, false);
    triangle(out, ab, bc, ca, z, owner, false);
  }

 private:
  static constexpr double kMaxAspect = 512.0;
  SizeField field_;
  std::map<double, std::vector<Segment>> edges_;
};

}  // namespace

std::vector<Panel> panelize(const ElectrodeLayout& layout, const SizeField& field) {
  if (!(field.min_size > 0) || !(field.max_size >= field.min_size) || !(field.grading > 0))
    throw ValidationError("", "invalid BEM size field");
  const Mesher mesher(layout, field);
  std::vector<Panel> out;
  const auto& els = layout.electrodes();
  for (std::size_t k = 0; k < els.size(); ++k) {
    for (const auto& raw : els[k].polygons) {
      const Polygon poly = polygon::to_ccw(raw);
      if (polygon::is_axis_aligned_rectangle(poly)) {
        const auto [lo, hi] = polygon::bounds(poly);
        mesher.rectangle(out, lo, hi, els[k].plane_z, k, true);
      } else {
        for (const auto& t : polygon::triangulate(poly)) mesher.triangle(out, t[0], t[1], t[2], els[k].plane_z, k, true);
      }
    }
  }
  return out;
}

std::vector<Panel> panelize_to_budget(const ElectrodeLayout& layout, std::size_t budget, SizeField shape) {
  if (budget < 4 * layout.size())
    throw ValidationError("", "panel budget must allow at least 4 panels per electrode");
  // Resolution scale s: edge cells scale as s; below s = 1 the interior
  // grading also tightens, as sqrt(s).
  auto at = [&](double s) {
    SizeField f = shape;
    f.min_size = shape.min_size * s;
    f.grading = shape.grading * std::min(1.0, std::sqrt(s));
    f.max_size = std::max(shape.max_size, f.min_size);
    return panelize(layout, f);
  };
  double coarse = 1e4, fine = 1e-4;
  auto panels = at(coarse);
  if (panels.size() > budget) throw ValidationError("", "panel budget too small for this layout");
  for (int it = 0; it < 60 && coarse / fine > 1.0 + 1e-3; ++it) {
    const double mid = std::sqrt(coarse * fine);
    auto trial = at(mid);
    if (trial.size() <= budget) {
      coarse = mid;
      panels = std::move(trial);
    } else {
      fine = mid;
    }
  }
  return panels;
}

SizeField default_size_field(const ElectrodeLayout& layout) {
  SizeField f;
  f.min_size = 1e-6;
  f.max_size = 1e-3;
  f.grading = 0.5;
  if (layout.metadata().contains("bem_focus")) {
    const auto& j = layout.metadata().at("bem_focus");
    f.focus = Vec2(j.at(0).get<double>(), j.at(1).get<double>());
    f.focus_radius = j.at(2).get<double>();
    f.focus_weight = 1.0;
  }
  return f;
}

BemEvaluator::BemEvaluator(std::vector<Panel> panels, std::vector<double> planes, std::size_t electrode_count)
    : panels_(std::move(panels)), planes_(std::move(planes)) {
  const auto n = static_cast<Eigen::Index>(panels_.size());
  if (n == 0) throw NumericalError("BEM: no panels");
  for (const auto& p : panels_) {
    if (!(p.area > 0)) throw NumericalError("BEM: degenerate panel with zero area");
    if (p.owner >= electrode_count) throw NumericalError("BEM: panel owner out of range");
  }

  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& pi = panels_[static_cast<std::size_t>(i)];
    const Vec3 c(pi.centroid.x(), pi.centroid.y(), pi.plane_z);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& pj = panels_[static_cast<std::size_t>(j)];
      a(i, j) = kernels::uniform_density_potential(pj.vertices, pj.plane_z, c, 0).value;
    }
  }
  if (!a.allFinite()) throw NumericalError("BEM: non-finite collocation matrix (coincident panels?)");

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(electrode_count));
  for (Eigen::Index i = 0; i < n; ++i) rhs(i, static_cast<Eigen::Index>(panels_[static_cast<std::size_t>(i)].owner)) = 1.0;

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  if (!(lu.rcond() > 1e-14)) throw NumericalError("BEM: singular collocation matrix (degenerate panelization)");
  coeffs_ = lu.solve(rhs);
  Eigen::MatrixXd r = rhs - a * coeffs_;
  coeffs_ += lu.solve(r);  // one step of iterative refinement
  r = rhs - a * coeffs_;
  residual_ = 0.0;
  for (Eigen::Index k = 0; k < rhs.cols(); ++k) {
    const double bn = rhs.col(k).norm();
    if (bn > 0) residual_ = std::max(residual_, r.col(k).norm() / bn);
  }
  if (!(residual_ <= 1e-10)) throw NumericalError("BEM: collocation residual above 1e-10");
}

void BemEvaluator::check_point(const Vec3& p) const {
  if (!p.allFinite()) throw EvaluationError("non-finite field point");
  for (double z : planes_) {
    if (std::abs(p.z() - z) <= 1e-12) throw EvaluationError("field point lies on an electrode plane");
  }
}

double BemEvaluator::boundary_distance(const Vec3& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (double z : planes_) d = std::min(d, std::abs(p.z() - z));
  return d;
}

void BemEvaluator::combine(const Vec3& p, int order, const Eigen::MatrixXd& weights,
                           std::span<FieldDerivs> out) const {
  check_point(p);
  const Eigen::MatrixXd w = coeffs_ * weights;
  const auto m = w.cols();
  for (auto& o : out) o = FieldDerivs{};
  for (std::size_t j = 0; j < panels_.size(); ++j) {
    const auto& pj = panels_[j];
    const auto d = kernels::uniform_density_potential(pj.vertices, pj.plane_z, p, order);
    for (Eigen::Index c = 0; c < m; ++c) {
      const double s = w(static_cast<Eigen::Index>(j), c);
      auto& o = out[static_cast<std::size_t>(c)];
      o.value += s * d.value;
      if (order >= kGradient) o.gradient += s * d.gradient;
      if (order >= kHessian) o.hessian += s * d.hessian;
    }
  }
}

Eigen::MatrixXd BemEvaluator::charge_density() const {
  return coeffs_ * (4.0 * constants::pi * constants::epsilon0);
}

}  // namespace iontrap::bem
