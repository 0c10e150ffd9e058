#include "iontrap/trapchar.hpp"

#include "iontrap/errors.hpp"
#include "iontrap/numerics.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace iontrap {

void IonSpecies::validate() const {
  if (!(mass > 0)) throw ValidationError(label, "ion mass must be > 0");
  if (!(charge != 0) || !std::isfinite(charge)) throw ValidationError(label, "ion charge must be nonzero");
}

IonSpecies mg24_ion() { return {"24Mg+", constants::mg24_mass, constants::elementary_charge}; }

IonSpecies ion_by_name(std::string_view name) {
  if (name == "Mg24" || name == "24Mg+" || name == "Mg24+") return mg24_ion();
  throw ValidationError(std::string(name), "unknown ion species (known: Mg24)");
}

// ---------------------------------------------------------------------------

TrapConfiguration::TrapConfiguration(std::shared_ptr<const PotentialBasis> basis, IonSpecies ion,
                                     double rf_amplitude, double rf_frequency,
                                     std::map<std::string, double> static_voltages, double reference_voltage)
    : basis_(std::move(basis)),
      ion_(std::move(ion)),
      rf_amplitude_(rf_amplitude),
      rf_frequency_(rf_frequency),
      static_voltages_(std::move(static_voltages)),
      reference_voltage_(reference_voltage) {
  if (!basis_) throw ValidationError("basis", "missing");
  ion_.validate();
  if (!(rf_frequency_ > 0)) throw ValidationError("rf_frequency", "must be > 0");
  if (!(rf_amplitude_ >= 0) || !std::isfinite(rf_amplitude_)) throw ValidationError("rf_amplitude", "must be >= 0");
  const auto n = static_cast<Eigen::Index>(basis_->size());
  weights_ = Eigen::MatrixXd::Zero(n, 2);
  for (std::size_t i = 0; i < basis_->size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (basis_->roles()[i] == ElectrodeRole::RF) {
      weights_(k, 1) = 1.0;
    } else {
      weights_(k, 0) = -reference_voltage_;
    }
  }
  for (const auto& [name, volts] : static_voltages_) {
    const std::size_t i = basis_->index_of(name);
    if (basis_->roles()[i] == ElectrodeRole::RF)
      throw ValidationError(name, "RF electrodes are held at the reference and take no static voltage");
    if (!std::isfinite(volts)) throw ValidationError(name, "static voltage must be finite");
    weights_(static_cast<Eigen::Index>(i), 0) = volts - reference_voltage_;
  }
}

TrapConfiguration TrapConfiguration::with_rf_amplitude(double volts) const {
  return TrapConfiguration(basis_, ion_, volts, rf_frequency_, static_voltages_, reference_voltage_);
}

TrapConfiguration TrapConfiguration::with_static_voltages(std::map<std::string, double> voltages,
                                                          double reference) const {
  return TrapConfiguration(basis_, ion_, rf_amplitude_, rf_frequency_, std::move(voltages), reference);
}

double TrapConfiguration::ponderomotive_scale() const noexcept {
  const double q = ion_.charge, a = rf_amplitude_, w = rf_frequency_;
  return q * q * a * a / (4.0 * ion_.mass * w * w);
}

ConfigFields config_fields(const TrapConfiguration& config, const Vec3& p, int order) {
  std::array<FieldDerivs, 2> out;
  config.basis().evaluate_many(config.weights(), p, order, out);
  return {out[0], out[1]};
}

namespace {

double fd_step(const PotentialBasis& basis, const Vec3& p) {
  const double d = basis.boundary_distance(p);
  return 1e-3 * (std::isfinite(d) ? d : basis.length_scale());
}

Vec3 ponderomotive_gradient(const TrapConfiguration& config, const Vec3& p) {
  const auto rf = config.basis().evaluate(config.weights().col(1), p, kHessian);
  return 2.0 * config.ponderomotive_scale() * (rf.hessian * rf.gradient);
}

}  // namespace

EnergyDerivs effective_potential(const TrapConfiguration& config, const Vec3& p, int order) {
  const double q = config.ion().charge;
  const double scale = config.ponderomotive_scale();
  const auto f = config_fields(config, p, std::min(order + 1, kHessian));
  EnergyDerivs e;
  e.value = q * f.static_field.value + scale * f.rf_field.gradient.squaredNorm();
  if (order >= kGradient)
    e.gradient = q * f.static_field.gradient + 2.0 * scale * (f.rf_field.hessian * f.rf_field.gradient);
  if (order >= kHessian) {
    e.hessian = q * f.static_field.hessian;
    if (scale > 0) {
      const Mat3 h = numerics::richardson_jacobian([&](const Vec3& x) { return ponderomotive_gradient(config, x); }, p,
                                                   fd_step(config.basis(), p));
      e.hessian += 0.5 * (h + h.transpose());
    }
  }
  return e;
}

double ponderomotive_potential(const TrapConfiguration& config, const Vec3& p) {
  const auto rf = config.basis().evaluate(config.weights().col(1), p, kGradient);
  return config.ponderomotive_scale() * rf.gradient.squaredNorm();
}

// ---------------------------------------------------------------------------
// Minimum

namespace {

// Energy at p, or nullopt outside the field region.
std::optional<EnergyDerivs> try_energy(const TrapConfiguration& config, const Vec3& p, int order) {
  try {
    return effective_potential(config, p, order);
  } catch (const EvaluationError&) {
    return std::nullopt;
  }
}

double max_step(const PotentialBasis& basis, const Vec3& p) {
  const double d = basis.boundary_distance(p);
  return std::min(basis.length_scale(), std::isfinite(d) ? 0.5 * d : basis.length_scale());
}

}  // namespace

MinimumResult find_minimum(const TrapConfiguration& config, const Vec3& seed, const MinimumOptions& options) {
  const auto& basis = config.basis();
  basis.check_point(seed);
  Vec3 x = seed;
  int stalls = 0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const EnergyDerivs e = effective_potential(config, x, kHessian);
    const double gnorm = e.gradient.norm();
    const auto eig = numerics::jacobi_eigen(e.hessian);
    const bool positive = eig.values[0] > 0;
    Vec3 step = Vec3::Zero();
    if (positive)
      for (int k = 0; k < 3; ++k) step -= eig.vectors.col(k) * (eig.vectors.col(k).dot(e.gradient) / eig.values[k]);
    // A small force alone is not convergence in a soft well.
    if (gnorm <= options.force_tolerance && positive && step.norm() <= options.position_tolerance) return {x, e, it};

    if (positive) {
      const double cap = max_step(basis, x);
      if (step.norm() > cap) step *= cap / step.norm();
      bool accepted = false;
      for (double t = 1.0; t > 1e-8; t *= 0.5) {
        const Vec3 y = x + t * step;
        const auto ey = try_energy(config, y, kGradient);
        if (!ey) continue;
        // Near convergence energy differences drop below rounding; a smaller
        // force is then the acceptance test.
        if (ey->value <= e.value + 1e-4 * t * e.gradient.dot(step) || ey->gradient.norm() < gnorm) {
          x = y;
          accepted = true;
          break;
        }
      }
      if (accepted) continue;
      if (++stalls > 3) break;
    }

    // Indefinite (or stalled): downhill simplex on the energy.
    const double q_scale = std::abs(config.ion().charge);
    const double s = 0.05 * max_step(basis, x);
    auto f = [&](const std::vector<double>& v) {
      const auto ev = try_energy(config, Vec3(v[0], v[1], v[2]), kValue);
      return ev ? ev->value : std::numeric_limits<double>::infinity();
    };
    const auto r = numerics::nelder_mead(f, {x.x(), x.y(), x.z()}, {s, s, s}, 1e-12 * q_scale, 1e-6 * s, 400);
    const Vec3 nx(r.x[0], r.x[1], r.x[2]);
    if (!(r.value < e.value - 1e-9 * q_scale) && (nx - x).norm() < 1e-3 * s) {
      if (gnorm <= options.force_tolerance)
        throw NotConfiningError("saddle point reached: effective potential Hessian is not positive definite");
      throw NotConfiningError("no confining minimum: the effective potential has no downhill direction to a well");
    }
    x = nx;
  }
  throw NotConfiningError("no confining minimum found within " + std::to_string(options.max_iterations) +
                          " iterations");
}

// ---------------------------------------------------------------------------
// Modes

Vec3 SecularModes::labeled_frequencies() const {
  return {frequencies[labels[0]], frequencies[labels[1]], frequencies[labels[2]]};
}

Mat3 SecularModes::labeled_axes() const {
  Mat3 m;
  for (int k = 0; k < 3; ++k) m.col(k) = axes.col(labels[k]);
  return m;
}

SecularModes modes_from_hessian(const Mat3& hessian, double mass, const Vec3& trap_axis) {
  const auto eig = numerics::jacobi_eigen(hessian / mass);
  if (!(eig.values[0] > 0))
    throw NotConfiningError("not a trap: effective potential curvature " + std::to_string(eig.values[0] * mass) +
                            " J/m^2 is not positive");
  SecularModes m;
  for (int k = 0; k < 3; ++k) {
    m.frequencies[k] = std::sqrt(eig.values[k]);
    Vec3 v = eig.vectors.col(k);
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v[big] < 0) v = -v;
    m.axes.col(k) = v;
  }
  int axial = 0;
  double best = -1;
  for (int k = 0; k < 3; ++k) {
    const double overlap = std::abs(m.axes.col(k).dot(trap_axis.normalized()));
    if (overlap > best) {
      best = overlap;
      axial = k;
    }
  }
  int j = 0;
  for (int k = 0; k < 3; ++k)
    if (k != axial) m.labels[j++] = k;
  m.labels[2] = axial;
  return m;
}

SecularModes secular_modes(const TrapConfiguration& config, const Vec3& minimum) {
  const auto e = effective_potential(config, minimum, kHessian);
  return modes_from_hessian(e.hessian, config.ion().mass, config.basis().trap_axis());
}

MathieuParameters mathieu_parameters(const TrapConfiguration& config, const Vec3& minimum, const SecularModes& modes) {
  const auto f = config_fields(config, minimum, kHessian);
  const double q = config.ion().charge, m = config.ion().mass, w = config.rf_frequency();
  MathieuParameters out;
  for (int k = 0; k < 3; ++k) {
    const Vec3 e = modes.axes.col(k);
    out.q[k] = 2.0 * q * config.rf_amplitude() * e.dot(f.rf_field.hessian * e) / (m * w * w);
    out.a[k] = 4.0 * q * e.dot(f.static_field.hessian * e) / (m * w * w);
  }
  out.adiabatic = out.q.cwiseAbs().maxCoeff() <= 0.9;
  return out;
}

Micromotion micromotion(const TrapConfiguration& config, const Vec3& point) {
  const auto rf = config.basis().evaluate(config.weights().col(1), point, kGradient);
  const double w = config.rf_frequency();
  Micromotion out;
  out.rf_field = config.rf_amplitude() * rf.gradient.norm();
  out.amplitude = std::abs(config.ion().charge) * out.rf_field / (config.ion().mass * w * w);
  return out;
}

// ---------------------------------------------------------------------------
// Depth

namespace {

// Eigenvector following (partitioned rational function steps): uphill along
// the lowest mode, downhill along the others.
Vec3 refine_saddle(const TrapConfiguration& config, Vec3 x, double trust, const DepthOptions& options) {
  const double max_trust = 4.0 * trust;
  EnergyDerivs e = effective_potential(config, x, kHessian);
  for (int it = 0; it < options.saddle_iterations; ++it) {
    const auto eig = numerics::jacobi_eigen(e.hessian);
    const double gnorm = e.gradient.norm();
    if (gnorm <= options.saddle_force_tolerance && eig.values[0] < 0 && eig.values[1] > 0) return x;
    Vec3 step = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      const double b = eig.values[k];
      const double g = eig.vectors.col(k).dot(e.gradient);
      if (g == 0.0) continue;
      const double shift = k == 0 ? 0.5 * (b + std::sqrt(b * b + 4 * g * g)) : 0.5 * (b - std::sqrt(b * b + 4 * g * g));
      step -= eig.vectors.col(k) * (g / (b - shift));
    }
    if (step.norm() > trust) step *= trust / step.norm();
    const auto ey = try_energy(config, x + step, kHessian);
    if (ey && ey->gradient.norm() < gnorm) {
      x += step;
      e = *ey;
      trust = std::min(2.0 * trust, max_trust);
    } else {
      trust *= 0.25;
      if (trust < 1e-15) break;
    }
  }
  throw NumericalError("saddle refinement did not converge to a first-order saddle");
}

}  // namespace

DepthResult trap_depth(const TrapConfiguration& config, const MinimumResult& minimum, const SecularModes& modes,
                       const DepthOptions& options) {
  const auto& basis = config.basis();
  const Vec3 p0 = minimum.position;
  const double u0 = minimum.energy.value;
  const double radius = options.max_radius > 0 ? options.max_radius : 8.0 * basis.length_scale();
  const double d0 = basis.boundary_distance(p0);
  const double min_clearance = std::isfinite(d0) ? options.clearance * d0 : 0.0;
  const double w0 = modes.frequencies[0];

  struct Ray {
    Vec3 direction;
    double barrier = std::numeric_limits<double>::infinity();
    double s_peak = 0.0, ds = 0.0;
  };
  Ray best;
  for (const Vec3& u : numerics::fibonacci_sphere(options.directions)) {
    // Shell s: semi-axes s * w0 / w_k along the principal axes, on which the
    // harmonic energy is constant.
    Vec3 d = Vec3::Zero();
    for (int k = 0; k < 3; ++k) d += modes.axes.col(k) * (u[k] * w0 / modes.frequencies[k]);
    const double ds = radius / options.samples;
    double prev = u0;
    for (int j = 1; j <= options.samples; ++j) {
      const Vec3 p = p0 + (j * ds) * d;
      if (basis.boundary_distance(p) < min_clearance) break;
      const auto e = try_energy(config, p, kValue);
      if (!e) break;
      if (e->value < prev && j > 1) {
        const double barrier = prev - u0;
        if (barrier < best.barrier) best = {d, barrier, (j - 1) * ds, ds};
        break;
      }
      prev = e->value;
    }
  }
  if (!std::isfinite(best.barrier))
    throw NumericalError("no escape barrier found inside the field region");

  // Peak along the best ray, then the saddle itself.
  auto minus_u = [&](double s) {
    const auto e = try_energy(config, p0 + s * best.direction, kValue);
    return e ? -e->value : std::numeric_limits<double>::infinity();
  };
  const auto peak = boost::math::tools::brent_find_minima(minus_u, best.s_peak - best.ds, best.s_peak + best.ds, 40);
  const Vec3 seed = p0 + peak.first * best.direction;
  const Vec3 saddle = refine_saddle(config, seed, 0.1 * (seed - p0).norm(), options);
  const double u_saddle = effective_potential(config, saddle, kValue).value;
  DepthResult out;
  out.depth = u_saddle - u0;
  out.saddle = saddle;
  out.escape_direction = (saddle - p0).normalized();
  if (!(out.depth >= 0)) throw NumericalError("escape saddle lies below the minimum");
  return out;
}

// ---------------------------------------------------------------------------

TrapCharacterization characterize(const TrapConfiguration& config, const Vec3& seed,
                                  const CharacterizeOptions& options) {
  TrapCharacterization out;
  out.minimum = find_minimum(config, seed, options.minimum);
  out.modes = modes_from_hessian(out.minimum.energy.hessian, config.ion().mass, config.basis().trap_axis());
  out.mathieu = mathieu_parameters(config, out.minimum.position, out.modes);
  out.micromotion = micromotion(config, out.minimum.position);
  if (options.compute_depth) out.depth = trap_depth(config, out.minimum, out.modes, options.depth);
  return out;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

nlohmann::json to_json(const TrapCharacterization& r, const TrapConfiguration& config) {
  using nlohmann::json;
  json j;
  j["minimum_m"] = vec_json(r.minimum.position);
  j["energy_at_minimum_J"] = r.minimum.energy.value;
  j["force_at_minimum_N"] = r.minimum.energy.gradient.norm();
  j["secular_frequencies_rad_s"] = vec_json(r.modes.frequencies);
  j["secular_frequencies_MHz"] = vec_json(r.modes.frequencies / hz_to_rad(1e6));
  json axes = json::array();
  for (int k = 0; k < 3; ++k) axes.push_back(vec_json(r.modes.axes.col(k)));
  j["principal_axes"] = axes;
  const char* names[3] = {"x", "y", "z"};
  for (int k = 0; k < 3; ++k) {
    const int m = r.modes.labels[k];
    j["modes"][names[k]] = {{"frequency_rad_s", r.modes.frequencies[m]},
                            {"frequency_MHz", r.modes.frequencies[m] / hz_to_rad(1e6)},
                            {"axis", vec_json(r.modes.axes.col(m))},
                            {"mathieu_q", r.mathieu.q[m]},
                            {"mathieu_a", r.mathieu.a[m]}};
  }
  j["mathieu_q"] = vec_json(r.mathieu.q);
  j["mathieu_a"] = vec_json(r.mathieu.a);
  j["adiabatic"] = r.mathieu.adiabatic;
  j["depth_J"] = r.depth.depth;
  j["depth_eV"] = joule_to_ev(r.depth.depth);
  j["depth_meV"] = 1e3 * joule_to_ev(r.depth.depth);
  j["escape_saddle_m"] = vec_json(r.depth.saddle);
  j["rf_field_at_min_V_per_m"] = r.micromotion.rf_field;
  j["micromotion_amplitude_m"] = r.micromotion.amplitude;
  j["height_um"] = 1e6 * config.basis().boundary_distance(r.minimum.position);
  json cfg;
  cfg["ion"] = {{"label", config.ion().label}, {"mass_kg", config.ion().mass}, {"charge_C", config.ion().charge}};
  cfg["rf_amplitude_V"] = config.rf_amplitude();
  cfg["rf_frequency_rad_s"] = config.rf_frequency();
  cfg["rf_frequency_MHz"] = config.rf_frequency() / hz_to_rad(1e6);
  cfg["static_voltages_V"] = config.static_voltages();
  cfg["reference_voltage_V"] = config.reference_voltage();
  cfg["backend"] = std::string(to_string(config.basis().backend()));
  j["configuration"] = cfg;
  return j;
}

// ---------------------------------------------------------------------------
// Inverse RF and geometry fits

RfInference infer_rf_amplitude(const TrapConfiguration& config, const Vec2& target, const Vec3& seed,
                               double max_residual) {
  if (!(target.minCoeff() > 0)) throw ValidationError("target_radial", "radial frequencies must be > 0");
  constexpr double lo = 1.0, hi = 500.0;
  Vec3 last_min = seed;
  auto evaluate = [&](double amplitude) -> std::optional<RfInference> {
    try {
      const auto c = config.with_rf_amplitude(amplitude);
      const auto m = find_minimum(c, last_min);
      const auto modes = modes_from_hessian(m.energy.hessian, c.ion().mass, c.basis().trap_axis());
      const Vec3 w = modes.labeled_frequencies();
      const double rx = (w.x() - target.x()) / target.x(), ry = (w.y() - target.y()) / target.y();
      last_min = m.position;
      return RfInference{amplitude, std::sqrt(0.5 * (rx * rx + ry * ry)), m.position, modes};
    } catch (const NotConfiningError&) {
      return std::nullopt;
    }
  };
  auto objective = [&](double a) {
    const auto r = evaluate(a);
    return r ? r->residual * r->residual : 1e6;
  };

  // Radial confinement is close to linear in the amplitude: rescale a probe
  // to bracket the optimum.
  double guess = std::clamp(0.1 * hi, lo, hi);
  for (double probe : {50.0, 150.0, 15.0, 400.0, 5.0}) {
    const auto r = evaluate(probe);
    if (!r) continue;
    const Vec3 w = r->modes.labeled_frequencies();
    guess = std::clamp(probe * 0.5 * (target.x() / w.x() + target.y() / w.y()), lo, hi);
    break;
  }
  const double a = std::max(lo, guess / 1.5), b = std::min(hi, guess * 1.5);
  const auto best = boost::math::tools::brent_find_minima(objective, a, b, 50);
  const auto result = evaluate(best.first);
  if (!result || result->residual > max_residual)
    throw InfeasibleError("no RF amplitude in [1, 500] V matches the radial frequencies (best residual " +
                          (result ? std::to_string(result->residual) : std::string("n/a")) + ")");
  return *result;
}

Vec3 find_rf_null(const PotentialBasis& basis, const Vec3& seed) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i : basis.indices_with_role(ElectrodeRole::RF)) w(static_cast<Eigen::Index>(i)) = 1.0;
  Vec3 x = seed;
  for (int it = 0; it < 100; ++it) {
    const auto f = basis.evaluate(w, x, kHessian);
    const auto eig = numerics::jacobi_eigen(f.hessian);
    const double top = eig.values.cwiseAbs().maxCoeff();
    Vec3 step = Vec3::Zero();
    for (int k = 0; k < 3; ++k)
      if (std::abs(eig.values[k]) > 1e-3 * top)
        step -= eig.vectors.col(k) * (eig.vectors.col(k).dot(f.gradient) / eig.values[k]);
    const double cap = max_step(basis, x);
    if (step.norm() > cap) step *= cap / step.norm();
    x += step;
    if (step.norm() <= 1e-14 + 1e-10 * basis.length_scale()) return x;
  }
  throw NumericalError("RF null search did not converge");
}

namespace {

// Bisection on a monotone increasing function of a scale factor.
double bisect_scale(const std::function<double(double)>& f, double target, double lo, double hi, double rtol) {
  double flo = f(lo), fhi = f(hi);
  if ((flo - target) * (fhi - target) > 0)
    throw InfeasibleError("target outside the reachable range of the fitted width");
  for (int it = 0; it < 100 && (hi - lo) > rtol * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm - target) * (flo - target) <= 0) {
      hi = mid;
      fhi = fm;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

SurfaceTrapParams fit_surface_widths(SurfaceTrapParams params, double target_height) {
  const double rail = params.rf_rail_width, centre = params.center_width;
  auto scaled = [&](double s) {
    SurfaceTrapParams p = params;
    p.rf_rail_width = s * rail;
    p.center_width = s * centre;
    return p;
  };
  auto height = [&](double s) {
    const auto basis = build_analytic_basis(builtin_surface_trap(scaled(s)));
    return find_rf_null(basis, {0.0, 0.0, s * target_height}).z();
  };
  const double s = bisect_scale(height, target_height, 0.25, 4.0, 1e-6);
  return scaled(s);
}

TwoLayerTrapParams fit_two_layer_slot(TwoLayerTrapParams params, double target_distance, const BemOptions& options) {
  const double slot = params.slot_width;
  auto distance = [&](double s) {
    TwoLayerTrapParams p = params;
    p.slot_width = s * slot;
    const auto layout = builtin_two_layer_trap(p);
    const auto basis = build_bem_basis(layout, options);
    const Vec3 null = find_rf_null(basis, {0.0, 0.0, 0.5 * p.plane_separation});
    double d = std::numeric_limits<double>::infinity();
    for (const auto& e : layout.electrodes())
      for (const auto& poly : e.polygons) d = std::min(d, polygon::distance_3d(poly, e.plane_z, null));
    return d;
  };
  params.slot_width = slot * bisect_scale(distance, target_distance, 0.2, 3.0, 1e-4);
  return params;
}

}  // namespace iontrap
