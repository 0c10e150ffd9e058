#pragma once

#include "iontrap/units.hpp"

#include <array>
#include <span>
#include <vector>

namespace iontrap {

/// Planar polygon, vertices in meters, implicit closing edge.
using Polygon = std::vector<Vec2>;
using Triangle = std::array<Vec2, 3>;

namespace polygon {

/// Positive for counter-clockwise vertex order.
double signed_area(std::span<const Vec2> poly);
double area(std::span<const Vec2> poly);
Vec2 centroid(std::span<const Vec2> poly);

/// True when no two non-adjacent edges touch and no adjacent edges overlap.
bool is_simple(std::span<const Vec2> poly);

/// Returns a counter-clockwise copy.
Polygon to_ccw(std::span<const Vec2> poly);

/// Ear-clipping triangulation of a simple polygon (any orientation).
std::vector<Triangle> triangulate(std::span<const Vec2> poly);

/// Clips a polygon against a convex CCW polygon (Sutherland-Hodgman).
Polygon clip_convex(std::span<const Vec2> subject, std::span<const Vec2> convex_clip);

/// Area of the intersection of two simple polygons.
double intersection_area(std::span<const Vec2> a, std::span<const Vec2> b);

/// Moves every edge outward by `distance` (miter joins). For a CCW polygon
/// outward means to the right of the edge direction.
Polygon offset(std::span<const Vec2> poly, double distance);

/// Axis-aligned bounds (min, max).
std::pair<Vec2, Vec2> bounds(std::span<const Vec2> poly);

/// True when the polygon is a rectangle with edges parallel to the axes.
bool is_axis_aligned_rectangle(std::span<const Vec2> poly, double tol = 1e-15);

bool contains(std::span<const Vec2> poly, const Vec2& p);

/// Euclidean distance from a 3D point to the polygon lying in plane z = plane_z.
double distance_3d(std::span<const Vec2> poly, double plane_z, const Vec3& p);

}  // namespace polygon
}  // namespace iontrap
