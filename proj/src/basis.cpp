#include "iontrap/basis.hpp"

#include "iontrap/bem.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>

namespace iontrap {

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::AnalyticPlane: return "analytic";
    case Backend::Bem: return "bem";
    case Backend::Synthetic: return "synthetic";
  }
  return "unknown";
}

namespace {

class AnalyticPlaneEvaluator final : public BasisEvaluator {
 public:
  AnalyticPlaneEvaluator(const ElectrodeLayout& layout) : plane_(layout.planes().front()) {
    const double gap = layout.gap();
    const Box3& box = layout.extent();
    const double far = 1e6 * std::max(box.size().x(), box.size().y());
    const double tol = 1e-12 * std::max(box.size().x(), box.size().y());
    const bool open = layout.open_boundary();

    // Gap boundary condition. Every electrode first grows to the gap centre,
    // which tiles the plane exactly ("split"). For "slot" each edge then gets
    // strips that shift its boundary across the gap by Gauss-Chebyshev
    // offsets, averaging to the thin-slot profile 1/2 - asin(2u/g)/pi. Strips
    // span only the original edge, so gap crossings keep the split partition
    // and neighbouring strips cancel pairwise.
    std::vector<double> shifts;
    const std::string model = layout.metadata().value("gap_model", std::string("slot"));
    if (model == "slot") {
      if (gap > 0) {
        constexpr int n = 6;
        for (int k = 1; k <= n; ++k) shifts.push_back(0.5 * gap * std::cos((2.0 * k - 1.0) * constants::pi / (2.0 * n)));
      }
    } else if (model != "split") {
      throw ValidationError("gap_model", "expected \"slot\" or \"split\"");
    }
    const double strip_weight = shifts.empty() ? 0.0 : 1.0 / static_cast<double>(shifts.size());

    auto on_box = [&](const Vec2& v) {
      return std::array<bool, 4>{std::abs(v.x() - box.lo.x()) <= tol, std::abs(v.x() - box.hi.x()) <= tol,
                                 std::abs(v.y() - box.lo.y()) <= tol, std::abs(v.y() - box.hi.y()) <= tol};
    };

    for (const auto& el : layout.electrodes()) {
      std::vector<Piece> pieces;
      for (const auto& raw : el.polygons) {
        const Polygon ccw = polygon::to_ccw(raw);
        const std::size_t m = ccw.size();
        // Vertices on the layout boundary move out so the union tiles the plane.
        Polygon ext = ccw;
        std::vector<bool> boundary_edge(m, false);
        if (open) {
          for (std::size_t i = 0; i < m; ++i) {
            const auto f = on_box(ccw[i]);
            if (f[0]) ext[i].x() = box.lo.x() - far;
            if (f[1]) ext[i].x() = box.hi.x() + far;
            if (f[2]) ext[i].y() = box.lo.y() - far;
            if (f[3]) ext[i].y() = box.hi.y() + far;
            const auto g = on_box(ccw[(i + 1) % m]);
            for (int side = 0; side < 4; ++side) boundary_edge[i] = boundary_edge[i] || (f[side] && g[side]);
          }
        }
        pieces.push_back({gap > 0 ? polygon::offset(ext, 0.5 * gap) : ext, 1.0});
        for (std::size_t i = 0; i < m; ++i) {
          if (boundary_edge[i]) continue;
          const Vec2& a = ext[i];
          const Vec2& b = ext[(i + 1) % m];
          const Vec2 t = (b - a).normalized();
          const Vec2 n(t.y(), -t.x());  // outward for CCW
          const Vec2 mid_a = a + 0.5 * gap * n, mid_b = b + 0.5 * gap * n;
          for (double d : shifts) {
            if (d == 0.0) continue;
            const Vec2 off_a = mid_a + d * n, off_b = mid_b + d * n;
            // CCW strip between the gap centre and the shifted boundary.
            if (d > 0)
              pieces.push_back({{off_a, off_b, mid_b, mid_a}, strip_weight});
            else
              pieces.push_back({{mid_a, mid_b, off_b, off_a}, -strip_weight});
          }
        }
      }
      pieces_.push_back(std::move(pieces));
    }
  }

  void check_point(const Vec3& p) const override {
    if (!p.allFinite()) throw EvaluationError("non-finite field point");
    if (p.z() - plane_ <= 1e-12) throw EvaluationError("field point is on or below the electrode plane");
  }

  double boundary_distance(const Vec3& p) const override { return p.z() - plane_; }

  void combine(const Vec3& p, int order, const Eigen::MatrixXd& weights, std::span<FieldDerivs> out) const override {
    check_point(p);
    for (auto& o : out) o = FieldDerivs{};
    for (std::size_t k = 0; k < pieces_.size(); ++k) {
      const auto row = weights.row(static_cast<Eigen::Index>(k));
      if (row.isZero(0.0)) continue;
      for (const auto& piece : pieces_[k]) {
        const auto d = kernels::solid_angle(piece.polygon, plane_, p, order);
        for (Eigen::Index c = 0; c < row.size(); ++c) {
          const double s = row(c) * piece.weight / two_pi;
          if (s == 0.0) continue;
          auto& o = out[static_cast<std::size_t>(c)];
          o.value += s * d.value;
          if (order >= kGradient) o.gradient += s * d.gradient;
          if (order >= kHessian) o.hessian += s * d.hessian;
        }
      }
    }
  }

 private:
  struct Piece {
    Polygon polygon;  // CCW
    double weight;
  };
  double plane_;
  std::vector<std::vector<Piece>> pieces_;
};

class SyntheticEvaluator final : public BasisEvaluator {
 public:
  SyntheticEvaluator(std::vector<SyntheticElectrode> electrodes, Vec3 center, double radius)
      : electrodes_(std::move(electrodes)), center_(std::move(center)), radius_(radius) {}

  void check_point(const Vec3& p) const override {
    if (!p.allFinite()) throw EvaluationError("non-finite field point");
    if ((p - center_).norm() > radius_) throw EvaluationError("field point outside the synthetic field region");
  }

  double boundary_distance(const Vec3&) const override { return std::numeric_limits<double>::infinity(); }

  void combine(const Vec3& p, int order, const Eigen::MatrixXd& weights, std::span<FieldDerivs> out) const override {
    check_point(p);
    for (auto& o : out) o = FieldDerivs{};
    for (std::size_t k = 0; k < electrodes_.size(); ++k) {
      const auto row = weights.row(static_cast<Eigen::Index>(k));
      if (row.isZero(0.0)) continue;
      const auto d = electrodes_[k].field(p, order);
      for (Eigen::Index c = 0; c < row.size(); ++c) {
        const double s = row(c);
        auto& o = out[static_cast<std::size_t>(c)];
        o.value += s * d.value;
        if (order >= kGradient) o.gradient += s * d.gradient;
        if (order >= kHessian) o.hessian += s * d.hessian;
      }
    }
  }

 private:
  std::vector<SyntheticElectrode> electrodes_;
  Vec3 center_;
  double radius_;
};

double default_length_scale(const ElectrodeLayout& layout) {
  if (layout.metadata().contains("length_scale_m")) return layout.metadata().at("length_scale_m").get<double>();
  const auto& planes = layout.planes();
  if (planes.size() > 1) {
    double sep = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < planes.size(); ++i) sep = std::min(sep, std::abs(planes[i] - planes[i - 1]));
    return 0.5 * sep;
  }
  const Vec3 s = layout.extent().size();
  return 0.1 * std::min(s.x(), s.y());
}

std::vector<std::string> names_of(const ElectrodeLayout& layout) {
  std::vector<std::string> out;
  for (const auto& e : layout.electrodes()) out.push_back(e.name);
  return out;
}

std::vector<ElectrodeRole> roles_of(const ElectrodeLayout& layout) {
  std::vector<ElectrodeRole> out;
  for (const auto& e : layout.electrodes()) out.push_back(e.role);
  return out;
}

}  // namespace

PotentialBasis::PotentialBasis(std::vector<std::string> names, std::vector<ElectrodeRole> roles, Backend backend,
                               std::shared_ptr<const BasisEvaluator> evaluator, Vec3 trap_axis, double length_scale,
                               std::shared_ptr<const ElectrodeLayout> layout)
    : names_(std::move(names)),
      roles_(std::move(roles)),
      backend_(backend),
      evaluator_(std::move(evaluator)),
      trap_axis_(trap_axis.normalized()),
      length_scale_(length_scale),
      layout_(std::move(layout)) {
  if (names_.size() != roles_.size()) throw ValidationError("", "basis names and roles differ in length");
  if (!evaluator_) throw ValidationError("", "basis needs an evaluator");
  if (!(length_scale_ > 0)) throw ValidationError("", "basis length scale must be positive");
}

std::size_t PotentialBasis::index_of(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ValidationError(std::string(name), "unknown electrode");
  return static_cast<std::size_t>(it - names_.begin());
}

std::vector<std::size_t> PotentialBasis::indices_with_role(ElectrodeRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles_.size(); ++i)
    if (roles_[i] == role) out.push_back(i);
  return out;
}

FieldDerivs PotentialBasis::derivs(std::size_t index, const Vec3& p, int order) const {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(size()), 1);
  w(static_cast<Eigen::Index>(index), 0) = 1.0;
  FieldDerivs out;
  evaluator_->combine(p, order, w, std::span<FieldDerivs>(&out, 1));
  return out;
}

double PotentialBasis::potential(std::string_view name, const Vec3& p) const {
  return derivs(index_of(name), p, kValue).value;
}

Vec3 PotentialBasis::gradient(std::string_view name, const Vec3& p) const {
  return derivs(index_of(name), p, kGradient).gradient;
}

Mat3 PotentialBasis::hessian(std::string_view name, const Vec3& p) const {
  return derivs(index_of(name), p, kHessian).hessian;
}

std::vector<FieldDerivs> PotentialBasis::all(const Vec3& p, int order) const {
  const auto n = static_cast<Eigen::Index>(size());
  std::vector<FieldDerivs> out(size());
  evaluator_->combine(p, order, Eigen::MatrixXd::Identity(n, n), out);
  return out;
}

Eigen::VectorXd PotentialBasis::voltage_vector(const std::map<std::string, double>& voltages) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size()));
  for (const auto& [name, volts] : voltages) v(static_cast<Eigen::Index>(index_of(name))) = volts;
  return v;
}

FieldDerivs PotentialBasis::evaluate(const Eigen::VectorXd& voltages, const Vec3& p, int order) const {
  if (voltages.size() != static_cast<Eigen::Index>(size()))
    throw ValidationError("", "voltage vector length does not match the basis");
  FieldDerivs out;
  evaluator_->combine(p, order, voltages, std::span<FieldDerivs>(&out, 1));
  return out;
}

FieldDerivs PotentialBasis::evaluate_total(const std::map<std::string, double>& voltages, const Vec3& p,
                                           int order) const {
  return evaluate(voltage_vector(voltages), p, order);
}

void PotentialBasis::evaluate_many(const Eigen::MatrixXd& weights, const Vec3& p, int order,
                                   std::span<FieldDerivs> out) const {
  if (weights.rows() != static_cast<Eigen::Index>(size()) || static_cast<Eigen::Index>(out.size()) != weights.cols())
    throw ValidationError("", "weight matrix shape does not match the basis");
  evaluator_->combine(p, order, weights, out);
}

PotentialBasis build_analytic_basis(const ElectrodeLayout& layout) {
  if (layout.planes().size() != 1)
    throw ValidationError("", "analytic plane backend requires a single-plane layout");
  auto shared = std::make_shared<const ElectrodeLayout>(layout);
  auto eval = std::make_shared<const AnalyticPlaneEvaluator>(*shared);
  return PotentialBasis(names_of(layout), roles_of(layout), Backend::AnalyticPlane, std::move(eval),
                        layout.trap_axis(), default_length_scale(layout), std::move(shared));
}

namespace {

PotentialBasis bem_basis_from_panels(const ElectrodeLayout& layout, std::vector<bem::Panel> panels) {
  auto eval = std::make_shared<const bem::BemEvaluator>(std::move(panels), layout.planes(), layout.size());
  return PotentialBasis(names_of(layout), roles_of(layout), Backend::Bem, std::move(eval), layout.trap_axis(),
                        default_length_scale(layout), std::make_shared<const ElectrodeLayout>(layout));
}

}  // namespace

PotentialBasis build_bem_basis(const ElectrodeLayout& layout, const BemOptions& options) {
  return bem_basis_from_panels(layout,
                               bem::panelize_to_budget(layout, options.panel_budget, bem::default_size_field(layout)));
}

PotentialBasis bem::build_bem_basis(const ElectrodeLayout& layout, const SizeField& field) {
  return bem_basis_from_panels(layout, panelize(layout, field));
}

PotentialBasis build_basis(const ElectrodeLayout& layout, Backend backend, const BemOptions& options) {
  switch (backend) {
    case Backend::AnalyticPlane: return build_analytic_basis(layout);
    case Backend::Bem: return build_bem_basis(layout, options);
    case Backend::Synthetic: break;
  }
  throw ValidationError("", "synthetic backend cannot be built from a layout");
}

SyntheticElectrode quadratic_electrode(std::string name, ElectrodeRole role, double c, const Vec3& g, const Mat3& Q) {
  const Mat3 q = 0.5 * (Q + Q.transpose());
  return {std::move(name), role, [c, g, q](const Vec3& r, int) {
            FieldDerivs d;
            d.value = c + g.dot(r) + 0.5 * r.dot(q * r);
            d.gradient = g + q * r;
            d.hessian = q;
            return d;
          }};
}

SyntheticElectrode differentiated_electrode(std::string name, ElectrodeRole role,
                                            std::function<double(const Vec3&)> value,
                                            std::function<Vec3(const Vec3&)> gradient, double step) {
  return {std::move(name), role, [value = std::move(value), gradient = std::move(gradient), step](const Vec3& r, int order) {
            FieldDerivs d;
            d.value = value(r);
            if (order >= kGradient) d.gradient = gradient(r);
            if (order >= kHessian) {
              const Mat3 j = numerics::richardson_jacobian(gradient, r, step);
              d.hessian = 0.5 * (j + j.transpose());
            }
            return d;
          }};
}

PotentialBasis build_synthetic_basis(std::vector<SyntheticElectrode> electrodes, Vec3 trap_axis, double length_scale,
                                     Vec3 center, double region_radius) {
  std::vector<std::string> names;
  std::vector<ElectrodeRole> roles;
  for (const auto& e : electrodes) {
    if (std::find(names.begin(), names.end(), e.name) != names.end())
      throw ValidationError(e.name, "duplicate electrode name");
    names.push_back(e.name);
    roles.push_back(e.role);
  }
  auto eval = std::make_shared<const SyntheticEvaluator>(std::move(electrodes), center, region_radius);
  return PotentialBasis(std::move(names), std::move(roles), Backend::Synthetic, std::move(eval), trap_axis,
                        length_scale);
}

void write_grid_csv(const PotentialBasis& basis, std::span<const Vec3> points, std::ostream& out) {
  out << "x,y,z";
  for (const auto& n : basis.names()) out << ",phi_" << n;
  out << '\n';
  out << std::setprecision(12);
  for (const auto& p : points) {
    const auto d = basis.all(p, kValue);
    out << p.x() << ',' << p.y() << ',' << p.z();
    for (const auto& v : d) out << ',' << v.value;
    out << '\n';
  }
}

}  // namespace iontrap
