#include "iontrap/kernels.hpp"

#include <cmath>

namespace iontrap::kernels {

namespace {

Mat3 skew(const Vec3& t) {
  Mat3 m;
  m << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  return m;
}

Vec3 lift(const Vec2& v, double z) { return {v.x(), v.y(), z}; }

// ln(R + l) for an edge endpoint, with its gradient with respect to the field
// point. R = |E - p|, l = (E - p).t, w = perpendicular offset of p from the
// edge line. The conjugate form avoids cancellation when l < 0.
struct LogTerm {
  double value;
  Vec3 gradient;
};

LogTerm log_term(const Vec3& E, const Vec3& t, const Vec3& p, bool want_gradient) {
  const Vec3 d = p - E;
  const double R = d.norm();
  const double l = -d.dot(t);
  LogTerm out{0.0, Vec3::Zero()};
  if (l >= 0) {
    out.value = std::log(R + l);
    if (want_gradient) out.gradient = (d / R - t) / (R + l);
  } else {
    const Vec3 w = d - d.dot(t) * t;
    const double r0sq = w.squaredNorm();
    out.value = std::log(r0sq) - std::log(R - l);
    if (want_gradient) out.gradient = 2.0 * w / r0sq - (d / R + t) / (R - l);
  }
  return out;
}

}  // namespace

Derivs solid_angle(std::span<const Vec2> poly, double plane_z, const Vec3& p, int order) {
  Derivs out;
  const std::size_t n = poly.size();

  // Fan triangulation from vertex 0 with the Van Oosterom-Strackee formula;
  // signed triangle contributions sum to the polygon's solid angle.
  const Vec3 a = lift(poly[0], plane_z) - p;
  const double la = a.norm();
  double omega = 0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Vec3 b = lift(poly[i], plane_z) - p;
    const Vec3 c = lift(poly[i + 1], plane_z) - p;
    const double lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
    omega -= 2.0 * std::atan2(num, den);
  }
  out.value = omega;
  if (order < 1) return out;

  // Gradient: line integral over the boundary (Biot-Savart form), one closed
  // form per straight edge; Hessian by differentiating that closed form.
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 A = lift(poly[i], plane_z);
    const Vec3 B = lift(poly[(i + 1) % n], plane_z);
    const Vec3 t = (B - A).normalized();
    const Vec3 ea = A - p, eb = B - p;
    const double na = ea.norm(), nb = eb.norm();
    const Vec3 v = t.cross(ea);
    const double d2 = v.squaredNorm();
    const double s = eb.dot(t) / nb - ea.dot(t) / na;
    out.gradient += v * (s / d2);
    if (order >= 2) {
      const Mat3 M = -skew(t);  // dv/dp
      const Vec3 grad_s = (-t / nb + eb.dot(t) * eb / (nb * nb * nb)) - (-t / na + ea.dot(t) * ea / (na * na * na));
      const Eigen::RowVector3d grad_d2 = 2.0 * v.transpose() * M;
      out.hessian += M * (s / d2) + v * grad_s.transpose() / d2 - v * grad_d2 * (s / (d2 * d2));
    }
  }
  if (order >= 2) out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
  return out;
}

Derivs uniform_density_potential(std::span<const Vec2> poly, double plane_z, const Vec3& p, int order) {
  Derivs out;
  const std::size_t n = poly.size();
  const double h = p.z() - plane_z;
  const double ah = std::abs(h);
  const Vec2 rho(p.x(), p.y());

  double beta_sum = 0;
  Mat3 inplane_hess = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& A2 = poly[i];
    const Vec2& B2 = poly[(i + 1) % n];
    const Vec2 t2 = (B2 - A2).normalized();
    const Vec2 u2(t2.y(), -t2.x());  // outward normal for CCW order
    const double p0 = (A2 - rho).dot(u2);
    const double lm = (A2 - rho).dot(t2);
    const double lp = (B2 - rho).dot(t2);
    const double r0sq = p0 * p0 + h * h;
    const double rm = std::sqrt(r0sq + lm * lm);
    const double rp = std::sqrt(r0sq + lp * lp);

    const Vec3 t(t2.x(), t2.y(), 0.0);
    const bool on_line = r0sq <= 1e-30 * (rm * rm + rp * rp);
    LogTerm fp{0, Vec3::Zero()}, fm{0, Vec3::Zero()};
    if (!on_line) {
      fp = log_term(lift(B2, plane_z), t, p, order >= 2);
      fm = log_term(lift(A2, plane_z), t, p, order >= 2);
    } else if (lm * lp > 0) {
      // Field point on the extension of the edge line (only on the plane).
      fp.value = std::log(std::abs(lp));
      fm.value = std::log(std::abs(lm));
    }
    const double L = fp.value - fm.value;

    if (ah > 0 && p0 != 0) {
      beta_sum += std::atan(p0 * lp / (r0sq + ah * rp)) - std::atan(p0 * lm / (r0sq + ah * rm));
    }
    out.value += p0 * L;
    if (order >= 1) out.gradient -= Vec3(u2.x(), u2.y(), 0.0) * L;
    if (order >= 2) inplane_hess -= Vec3(u2.x(), u2.y(), 0.0) * (fp.gradient - fm.gradient).transpose();
  }
  out.value -= ah * beta_sum;
  if (order < 1) return out;

  const double sgn = h > 0 ? 1.0 : -1.0;
  out.gradient.z() = -sgn * beta_sum;
  if (order >= 2) {
    const Derivs sa = solid_angle(poly, plane_z, p, 1);
    out.hessian = inplane_hess;
    out.hessian.row(2) = -sa.gradient.transpose();
    out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
    // Row 2 of inplane_hess is zero, so the symmetrised matrix takes the
    // z-column from the solid-angle gradient and the xy block from the edges.
    out.hessian.row(2) = -sa.gradient.transpose();
    out.hessian.col(2) = -sa.gradient;
  }
  return out;
}

}  // namespace iontrap::kernels
