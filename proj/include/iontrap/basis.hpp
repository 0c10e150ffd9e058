#pragma once

#include "iontrap/geometry.hpp"
#include "iontrap/kernels.hpp"

#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace iontrap {

using FieldDerivs = kernels::Derivs;

/// Derivative orders requested from an evaluator.
inline constexpr int kValue = 0;
inline constexpr int kGradient = 1;
inline constexpr int kHessian = 2;

enum class Backend { AnalyticPlane, Bem, Synthetic };

std::string_view to_string(Backend backend);

/// Unit-voltage electrode potentials. Implementations are immutable and
/// reentrant.
class BasisEvaluator {
 public:
  virtual ~BasisEvaluator() = default;

  /// Throws EvaluationError when p lies outside the field region.
  virtual void check_point(const Vec3& p) const = 0;

  /// out[c] = sum_k weights(k, c) * (phi_k and its derivatives up to order).
  /// weights has one row per electrode.
  virtual void combine(const Vec3& p, int order, const Eigen::MatrixXd& weights,
                       std::span<FieldDerivs> out) const = 0;

  /// Distance from p to the nearest electrode plane (infinite when unbounded).
  virtual double boundary_distance(const Vec3& p) const = 0;
};

/// Per-electrode potential basis phi_i with gradient and Hessian.
class PotentialBasis {
 public:
  PotentialBasis(std::vector<std::string> names, std::vector<ElectrodeRole> roles, Backend backend,
                 std::shared_ptr<const BasisEvaluator> evaluator, Vec3 trap_axis = Vec3::UnitX(),
                 double length_scale = 100e-6, std::shared_ptr<const ElectrodeLayout> layout = nullptr);

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<ElectrodeRole>& roles() const noexcept { return roles_; }
  std::size_t size() const noexcept { return names_.size(); }
  Backend backend() const noexcept { return backend_; }
  /// Null for synthetic bases.
  const ElectrodeLayout* layout() const noexcept { return layout_.get(); }
  const Vec3& trap_axis() const noexcept { return trap_axis_; }
  /// Typical distance from the trap region to the electrodes; sets search and
  /// step scales.
  double length_scale() const noexcept { return length_scale_; }

  /// Throws ValidationError for unknown names.
  std::size_t index_of(std::string_view name) const;
  std::vector<std::size_t> indices_with_role(ElectrodeRole role) const;

  void check_point(const Vec3& p) const { evaluator_->check_point(p); }
  double boundary_distance(const Vec3& p) const { return evaluator_->boundary_distance(p); }

  double potential(std::string_view name, const Vec3& p) const;
  Vec3 gradient(std::string_view name, const Vec3& p) const;
  Mat3 hessian(std::string_view name, const Vec3& p) const;
  FieldDerivs derivs(std::size_t index, const Vec3& p, int order = kHessian) const;

  /// All basis functions at once.
  std::vector<FieldDerivs> all(const Vec3& p, int order = kHessian) const;

  /// Dense voltage vector from a name map (missing names are 0 V).
  Eigen::VectorXd voltage_vector(const std::map<std::string, double>& voltages) const;

  /// Superposition sum_i V_i phi_i for a dense voltage vector.
  FieldDerivs evaluate(const Eigen::VectorXd& voltages, const Vec3& p, int order = kHessian) const;
  FieldDerivs evaluate_total(const std::map<std::string, double>& voltages, const Vec3& p,
                             int order = kHessian) const;
  /// Several superpositions sharing one pass over the basis.
  void evaluate_many(const Eigen::MatrixXd& weights, const Vec3& p, int order, std::span<FieldDerivs> out) const;

 private:
  std::vector<std::string> names_;
  std::vector<ElectrodeRole> roles_;
  Backend backend_;
  std::shared_ptr<const BasisEvaluator> evaluator_;
  Vec3 trap_axis_;
  double length_scale_;
  std::shared_ptr<const ElectrodeLayout> layout_;
};

/// Gapless-plane basis: phi_i = Omega_i / (2 pi) over the electrode polygons,
/// with the potential across each gap of width gap_m given by the thin-slot
/// profile (metadata gap_model "slot", default) or a step at the gap centre
/// ("split"). Requires a single-plane layout.
PotentialBasis build_analytic_basis(const ElectrodeLayout& layout);

struct BemOptions {
  /// Upper bound on the total panel count (>= 4 per electrode).
  std::size_t panel_budget = 2400;
};

PotentialBasis build_bem_basis(const ElectrodeLayout& layout, const BemOptions& options = {});

PotentialBasis build_basis(const ElectrodeLayout& layout, Backend backend, const BemOptions& options = {});

/// Electrode defined by a callable; used for synthetic and test fields.
struct SyntheticElectrode {
  std::string name;
  ElectrodeRole role = ElectrodeRole::DC;
  /// Returns derivatives up to the requested order.
  std::function<FieldDerivs(const Vec3&, int)> field;
};

/// phi = c + g.r + r^T Q r / 2 (Q symmetrised).
SyntheticElectrode quadratic_electrode(std::string name, ElectrodeRole role, double c, const Vec3& g, const Mat3& Q);

/// Value and gradient from callables; Hessian by Richardson differences of
/// the gradient with the given step.
SyntheticElectrode differentiated_electrode(std::string name, ElectrodeRole role,
                                            std::function<double(const Vec3&)> value,
                                            std::function<Vec3(const Vec3&)> gradient, double step);

/// Synthetic bases are defined everywhere within `region_radius` of `center`.
PotentialBasis build_synthetic_basis(std::vector<SyntheticElectrode> electrodes, Vec3 trap_axis = Vec3::UnitX(),
                                     double length_scale = 100e-6, Vec3 center = Vec3::Zero(),
                                     double region_radius = 1e-3);

/// CSV grid export: header x,y,z,phi_<electrode>...
void write_grid_csv(const PotentialBasis& basis, std::span<const Vec3> points, std::ostream& out);

}  // namespace iontrap
