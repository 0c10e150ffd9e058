#pragma once

// Boundary-element backend: constant charge density per flat panel,
// collocation at panel centroids, free-space Green's function.

#include "iontrap/basis.hpp"

#include <limits>

namespace iontrap::bem {

struct Panel {
  Polygon vertices;  // CCW
  double plane_z = 0.0;
  Vec2 centroid = Vec2::Zero();
  double area = 0.0;
  std::size_t owner = 0;  // electrode index
};

/// Local panel size across each axis: max(min_size, grading * d_edge) * stretch,
/// capped at max_size. d_edge is the distance from the cell to the nearest
/// electrode edge in the same plane that limits that axis;
/// stretch = 1 + focus_weight * d_focus / focus_radius grows with the distance
/// d_focus outside the focus disc. Inside the disc panels are also capped at
/// focus_max_size.
struct SizeField {
  double min_size = 1e-6;
  double max_size = 1e-3;
  double grading = 0.5;
  Vec2 focus = Vec2::Zero();
  double focus_radius = 0.0;
  double focus_weight = 0.0;
  double focus_max_size = std::numeric_limits<double>::infinity();
};

/// Adaptive panelization: axis-aligned rectangles are split as a quadtree
/// (long cells halved along their long side), other polygons are
/// triangulated and split 4-way, until every panel satisfies the size field.
/// Every electrode polygon yields at least 4 panels.
std::vector<Panel> panelize(const ElectrodeLayout& layout, const SizeField& field);

/// Finest panelization (scaling min/max size together) whose panel count
/// does not exceed `budget`.
std::vector<Panel> panelize_to_budget(const ElectrodeLayout& layout, std::size_t budget, SizeField shape);

/// Size-field shape for a layout: focus taken from metadata "bem_focus"
/// ([x, y, radius]) when present.
SizeField default_size_field(const ElectrodeLayout& layout);

/// Basis from an explicit panelization.
PotentialBasis build_bem_basis(const ElectrodeLayout& layout, const SizeField& field);

class BemEvaluator final : public BasisEvaluator {
 public:
  /// Assembles and solves the collocation system, one right-hand side per
  /// electrode. Throws NumericalError on a singular or inaccurate solve.
  BemEvaluator(std::vector<Panel> panels, std::vector<double> planes, std::size_t electrode_count);

  void check_point(const Vec3& p) const override;
  void combine(const Vec3& p, int order, const Eigen::MatrixXd& weights, std::span<FieldDerivs> out) const override;
  double boundary_distance(const Vec3& p) const override;

  const std::vector<Panel>& panels() const noexcept { return panels_; }
  /// Solved coefficients in volts per meter: sigma / (4 pi eps0), one column
  /// per electrode.
  const Eigen::MatrixXd& coefficients() const noexcept { return coeffs_; }
  /// Surface charge density, C/m^2 per applied volt.
  Eigen::MatrixXd charge_density() const;
  /// max over electrodes of ||A q - b|| / ||b||.
  double relative_residual() const noexcept { return residual_; }

 private:
  std::vector<Panel> panels_;
  std::vector<double> planes_;
  Eigen::MatrixXd coeffs_;
  double residual_ = 0.0;
};

}  // namespace iontrap::bem
