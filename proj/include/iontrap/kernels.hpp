#pragma once

// Closed-form integrals over flat polygons lying in a plane z = const.
//
// Polygons must be counter-clockwise when viewed from +z. All functions are
// singular on the polygon plane itself; callers keep field points off it.

#include "iontrap/units.hpp"

#include <span>

namespace iontrap::kernels {

struct Derivs {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();
};

/// Signed solid angle subtended by the polygon at p: positive above the plane.
/// order: 0 value only, 1 adds gradient, 2 adds Hessian.
Derivs solid_angle(std::span<const Vec2> ccw_poly, double plane_z, const Vec3& p, int order = 0);

/// Single-layer potential of a unit surface density on the polygon,
/// Psi(p) = integral over the polygon of dA' / |p - r'|, and derivatives.
/// The value is finite on the plane (used for collocation); derivatives need
/// p off the plane.
Derivs uniform_density_potential(std::span<const Vec2> ccw_poly, double plane_z, const Vec3& p,
                                 int order = 0);

}  // namespace iontrap::kernels
