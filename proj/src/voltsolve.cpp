#include "iontrap/voltsolve.hpp"

#include "iontrap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace iontrap {

void WellConstraint::validate() const {
  if (!target_position.allFinite()) throw ValidationError("target_position", "must be finite");
  if (axial_frequency && !(*axial_frequency > 0)) throw ValidationError("axial_frequency", "must be > 0");
  auto check = [](const std::string& name, const VoltageBounds& b) {
    if (!(b.lower < b.upper)) throw ValidationError(name, "voltage bounds need lower < upper");
  };
  check("default_bounds", default_bounds);
  for (const auto& [name, b] : bounds) check(name, b);
  if (axes && ((axes->transpose() * *axes) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError("axes", "target axes must be orthonormal");
}

// ---------------------------------------------------------------------------
// Linear core

namespace {

double transverse_rf_field(const TrapConfiguration& config, const Vec3& p) {
  const Vec3 e = config.rf_amplitude() * config_fields(config, p, kGradient).rf_field.gradient;
  const Vec3 axis = config.basis().trap_axis().normalized();
  return (e - e.dot(axis) * axis).norm();
}

// Minimizer of ||A_F x - r||^2 + lambda ||x - p||^2 over the free block.
// The kernel form solves an m x m system, the normal form an n x n one;
// whichever is smaller keeps the conditioning near that of A.
Eigen::VectorXd regularized_block(const Eigen::MatrixXd& a, const Eigen::VectorXd& r, double lambda,
                                  const Eigen::VectorXd& p) {
  const auto m = a.rows(), n = a.cols();
  if (m < n) {
    Eigen::MatrixXd k = a * a.transpose();
    k.diagonal().array() += lambda;
    return p + a.transpose() * k.ldlt().solve(r - a * p);
  }
  Eigen::MatrixXd q = a.transpose() * a;
  q.diagonal().array() += lambda;
  return q.ldlt().solve(a.transpose() * r + lambda * p);
}

}  // namespace

Eigen::VectorXd solve_regularized(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda,
                                  const Eigen::VectorXd& prior, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const auto n = a.cols();
  if (!(lambda > 0)) throw ValidationError("lambda", "must be > 0");
  if (b.size() != a.rows() || prior.size() != n || lo.size() != n || hi.size() != n)
    throw ValidationError("", "regularized solve: dimension mismatch");
  if ((lo.array() >= hi.array()).any()) throw ValidationError("", "regularized solve: empty bound interval");

  // state: 0 free, -1 at lower bound, +1 at upper bound.
  Eigen::VectorXd v = prior.cwiseMax(lo).cwiseMin(hi);
  std::vector<int> state(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) state[i] = v[i] == lo[i] ? -1 : (v[i] == hi[i] ? 1 : 0);

  auto gradient = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return a.transpose() * (a * x - b) + lambda * (x - prior);
  };
  const double scale = gradient(Eigen::VectorXd::Zero(n)).norm() + std::numeric_limits<double>::min();

  for (int it = 0; it < 20 * static_cast<int>(n) + 20; ++it) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i)
      if (state[i] == 0) free.push_back(i);

    Eigen::VectorXd target = v;
    if (!free.empty()) {
      Eigen::MatrixXd af(a.rows(), static_cast<Eigen::Index>(free.size()));
      Eigen::VectorXd pf(static_cast<Eigen::Index>(free.size()));
      Eigen::VectorXd r = b;
      for (Eigen::Index i = 0; i < n; ++i)
        if (state[i] != 0) r -= a.col(i) * v[i];
      for (std::size_t k = 0; k < free.size(); ++k) {
        af.col(static_cast<Eigen::Index>(k)) = a.col(free[k]);
        pf[static_cast<Eigen::Index>(k)] = prior[free[k]];
      }
      const Eigen::VectorXd xf = regularized_block(af, r, lambda, pf);
      for (std::size_t k = 0; k < free.size(); ++k) target[free[k]] = xf[static_cast<Eigen::Index>(k)];
    }

    const Eigen::VectorXd d = target - v;
    if (d.norm() <= 1e-15 * (1.0 + v.norm())) {
      // Stationary on the working set: release the bound with the largest
      // wrong-signed multiplier, or stop.
      const Eigen::VectorXd g = gradient(v);
      Eigen::Index release = -1;
      double worst = 1e-13 * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double pull = state[i] == -1 ? -g[i] : (state[i] == 1 ? g[i] : 0.0);
        if (pull > worst) {
          worst = pull;
          release = i;
        }
      }
      if (release < 0) return v;
      state[release] = 0;
      continue;
    }

    double step = 1.0;
    Eigen::Index blocking = -1;
    int side = 0;
    for (Eigen::Index i : free) {
      if (d[i] < 0 && (lo[i] - v[i]) / d[i] < step) {
        step = (lo[i] - v[i]) / d[i];
        blocking = i;
        side = -1;
      } else if (d[i] > 0 && (hi[i] - v[i]) / d[i] < step) {
        step = (hi[i] - v[i]) / d[i];
        blocking = i;
        side = 1;
      }
    }
    v += std::max(step, 0.0) * d;
    if (blocking >= 0) {
      v[blocking] = side < 0 ? lo[blocking] : hi[blocking];
      state[blocking] = side;
    }
  }
  throw NumericalError("bounded least squares: active-set iteration did not terminate");
}

double l_curve_lambda(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  if (s.size() == 0 || !(s[0] > 0)) throw NumericalError("L-curve: zero constraint matrix");
  const Eigen::VectorXd beta = svd.matrixU().transpose() * b;
  const double outside = std::max(0.0, b.squaredNorm() - beta.squaredNorm());
  const double top = s[0] * s[0];

  constexpr int kPoints = 241;
  std::vector<double> t(kPoints), x(kPoints), y(kPoints);
  for (int k = 0; k < kPoints; ++k) {
    t[k] = std::log(1e-12) + (std::log(1.0) - std::log(1e-12)) * k / (kPoints - 1);
    const double lambda = top * std::exp(t[k]);
    double rho = outside, eta = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double si = s[i] * s[i];
      rho += std::pow(lambda / (si + lambda) * beta[i], 2);
      if (s[i] > 0) eta += std::pow(s[i] * beta[i] / (si + lambda), 2);
    }
    x[k] = 0.5 * std::log(std::max(rho, std::numeric_limits<double>::min()));
    y[k] = 0.5 * std::log(std::max(eta, std::numeric_limits<double>::min()));
  }
  // Corner: largest positive curvature (a left turn as lambda grows).
  int best = -1;
  double kappa_best = 0;
  for (int k = 1; k + 1 < kPoints; ++k) {
    const double h = t[k + 1] - t[k];
    const double x1 = (x[k + 1] - x[k - 1]) / (2 * h), y1 = (y[k + 1] - y[k - 1]) / (2 * h);
    const double x2 = (x[k + 1] - 2 * x[k] + x[k - 1]) / (h * h), y2 = (y[k + 1] - 2 * y[k] + y[k - 1]) / (h * h);
    const double speed = x1 * x1 + y1 * y1;
    if (speed <= 0) continue;
    const double kappa = (x1 * y2 - x2 * y1) / std::pow(speed, 1.5);
    if (kappa > kappa_best) {
      kappa_best = kappa;
      best = k;
    }
  }
  // A consistent system has no corner: its residual vanishes as lambda -> 0.
  return top * std::exp(best < 0 ? t.front() : t[best]);
}

ConstraintRows constraint_rows(const TrapConfiguration& rf_config, const WellConstraint& constraint,
                               std::span<const std::size_t> free_electrodes, const Vec3& point,
                               const Eigen::VectorXd& fixed_static) {
  const auto& basis = rf_config.basis();
  const double q = rf_config.ion().charge, m = rf_config.ion().mass;
  const double w_ref = constraint.axial_frequency.value_or(hz_to_rad(1e6));
  const double k_ref = m * w_ref * w_ref;
  const double length = basis.length_scale();

  const auto phi = basis.all(point, kHessian);
  const EnergyDerivs pond = effective_potential(rf_config.with_static_voltages({}), point, kHessian);
  const FieldDerivs fixed = basis.evaluate(fixed_static, point, kHessian);
  const Vec3 offset_gradient = pond.gradient + q * fixed.gradient;
  const Mat3 offset_hessian = pond.hessian + q * fixed.hessian;

  Vec3 ex, ey, ez;
  if (constraint.axes) {
    ex = constraint.axes->col(0);
    ey = constraint.axes->col(1);
    ez = constraint.axes->col(2);
  } else {
    ez = basis.trap_axis().normalized();
    const Vec3 seed = std::abs(ez.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    ex = (seed - seed.dot(ez) * ez).normalized();
    ey = ez.cross(ex);
  }
  struct Pair {
    Vec3 u, w;
    double target;
    const char* label;
  };
  std::vector<Pair> pairs;
  if (constraint.axial_frequency) pairs.push_back({ez, ez, m * w_ref * w_ref, "axial curvature"});
  pairs.push_back({ex, ez, 0.0, "x-z coupling"});
  pairs.push_back({ey, ez, 0.0, "y-z coupling"});
  if (constraint.axes) pairs.push_back({ex, ey, 0.0, "x-y coupling"});

  const auto n = static_cast<Eigen::Index>(free_electrodes.size());
  const auto rows = static_cast<Eigen::Index>(3 + pairs.size());
  ConstraintRows out{Eigen::MatrixXd::Zero(rows, n), Eigen::VectorXd::Zero(rows), {}};
  for (int r = 0; r < 3; ++r) {
    for (Eigen::Index j = 0; j < n; ++j) out.matrix(r, j) = q * phi[free_electrodes[j]].gradient[r] / (k_ref * length);
    out.rhs[r] = -offset_gradient[r] / (k_ref * length);
    out.labels.push_back(std::string("force ") + "xyz"[r]);
  }
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(3 + k);
    const auto& pr = pairs[k];
    for (Eigen::Index j = 0; j < n; ++j)
      out.matrix(r, j) = q * pr.u.dot(phi[free_electrodes[j]].hessian * pr.w) / k_ref;
    out.rhs[r] = (pr.target - pr.u.dot(offset_hessian * pr.w)) / k_ref;
    out.labels.emplace_back(pr.label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Static solve

StaticSolution solve_static(const TrapConfiguration& rf_config, const WellConstraint& constraint,
                            const SolveOptions& options) {
  constraint.validate();
  const auto& basis = rf_config.basis();
  basis.check_point(constraint.target_position);

  std::vector<std::size_t> free;
  if (options.electrodes.empty()) {
    for (std::size_t i = 0; i < basis.size(); ++i)
      if (basis.roles()[i] == ElectrodeRole::DC && !options.fixed.contains(basis.names()[i])) free.push_back(i);
  } else {
    for (const auto& name : options.electrodes) {
      const std::size_t i = basis.index_of(name);
      if (basis.roles()[i] != ElectrodeRole::DC) throw ValidationError(name, "only DC electrodes can be solved for");
      free.push_back(i);
    }
  }
  if (free.empty()) throw ValidationError("electrodes", "no free DC electrodes");
  Eigen::VectorXd fixed_static = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
  for (const auto& [name, volts] : options.fixed) {
    const std::size_t i = basis.index_of(name);
    if (basis.roles()[i] == ElectrodeRole::RF) throw ValidationError(name, "RF electrodes take no static voltage");
    if (std::find(free.begin(), free.end(), i) != free.end()) throw ValidationError(name, "both fixed and free");
    fixed_static[static_cast<Eigen::Index>(i)] = volts;
  }

  const auto n = static_cast<Eigen::Index>(free.size());
  Eigen::VectorXd lo(n), hi(n), previous = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& name = basis.names()[free[j]];
    const auto it = constraint.bounds.find(name);
    const VoltageBounds b = it == constraint.bounds.end() ? constraint.default_bounds : it->second;
    lo[j] = b.lower;
    hi[j] = b.upper;
    if (const auto p = options.previous.find(name); p != options.previous.end()) previous[j] = p->second;
  }

  StaticSolution out;
  out.target = constraint.target_position;
  if (constraint.require_rf_null) out.target = find_rf_null(basis, constraint.target_position);

  auto make_config = [&](const Eigen::VectorXd& v) {
    std::map<std::string, double> volts;
    for (std::size_t i = 0; i < basis.size(); ++i)
      if (fixed_static[static_cast<Eigen::Index>(i)] != 0.0 || options.fixed.contains(basis.names()[i]))
        volts[basis.names()[i]] = fixed_static[static_cast<Eigen::Index>(i)];
    for (Eigen::Index j = 0; j < n; ++j) volts[basis.names()[free[j]]] = v[j];
    return std::pair{rf_config.with_static_voltages(volts, 0.0), volts};
  };

  Vec3 linearization = out.target;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  for (int fp = 1;; ++fp) {
    ConstraintRows rows = constraint_rows(rf_config, constraint, free, linearization, fixed_static);
    Eigen::MatrixXd a = rows.matrix;
    Eigen::VectorXd b = rows.rhs;
    if (options.continuity_weight > 0) {
      const double s = std::sqrt(options.continuity_weight);
      a.conservativeResize(a.rows() + n, Eigen::NoChange);
      b.conservativeResize(b.size() + n);
      a.bottomRows(n) = s * Eigen::MatrixXd::Identity(n, n);
      b.tail(n) = s * previous;
    }
    out.lambda = options.lambda.value_or(l_curve_lambda(a, b));

    // Nonstationary iterated Tikhonov: each pass is the exact bounded
    // minimizer with the previous pass as prior, lambda halving per pass.
    v = Eigen::VectorXd::Zero(n);
    double residual = (a * v - b).norm();
    const double floor = 1e-12 * std::max(1.0, b.norm());
    const double lambda_floor = 1e-12 * a.squaredNorm();
    double lambda = out.lambda;
    int passes = 0;
    for (; passes < 200 && residual > floor; ++passes, lambda = std::max(0.5 * lambda, lambda_floor)) {
      const Eigen::VectorXd next = solve_regularized(a, b, lambda, v, lo, hi);
      const double r = (a * next - b).norm();
      const double moved = (next - v).norm();
      v = next;
      if (r > 0.999 * residual || moved <= 1e-14 * (1.0 + v.norm())) {
        residual = r;
        ++passes;
        break;
      }
      residual = r;
    }
    out.tikhonov_iterations = passes;

    auto [config, volts] = make_config(v);
    out.voltages = volts;
    MinimumResult min;
    try {
      min = find_minimum(config, out.target);
    } catch (const NotConfiningError& e) {
      throw InfeasibleError(std::string("solved voltages do not confine: ") + e.what());
    }
    out.achieved_position = min.position;
    out.position_error = (min.position - out.target).norm();
    out.fixed_point_iterations = fp;
    if (out.position_error <= options.position_tolerance || fp >= options.max_fixed_point) {
      try {
        out.modes = modes_from_hessian(min.energy.hessian, rf_config.ion().mass, basis.trap_axis());
      } catch (const NotConfiningError& e) {
        throw InfeasibleError(std::string("solved well is not confining: ") + e.what());
      }
      out.rf_field = micromotion(config, min.position).rf_field;
      out.rf_null_residual = transverse_rf_field(config, min.position);
      break;
    }
    linearization -= min.position - out.target;
  }

  out.active_bounds.clear();
  for (Eigen::Index j = 0; j < n; ++j)
    if (v[j] <= lo[j] || v[j] >= hi[j]) out.active_bounds.push_back(basis.names()[free[j]]);
  out.axial_frequency = out.modes.labeled_frequencies().z();

  if (out.position_error > options.position_limit) {
    std::ostringstream msg;
    msg << "well forms " << out.position_error * 1e6 << " um from the target";
    if (!out.active_bounds.empty()) msg << " (" << out.active_bounds.size() << " electrodes at voltage bounds)";
    throw InfeasibleError(msg.str());
  }
  if (constraint.axial_frequency) {
    const double rel = std::abs(*out.axial_frequency / *constraint.axial_frequency - 1.0);
    if (rel > options.frequency_tolerance) {
      std::ostringstream msg;
      msg << "axial frequency " << rad_to_hz(*out.axial_frequency) / 1e6 << " MHz misses the target "
          << rad_to_hz(*constraint.axial_frequency) / 1e6 << " MHz by " << 100 * rel << "%";
      throw InfeasibleError(msg.str());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transport

std::vector<Vec3> waypoints(std::span<const Vec3> path, int n) {
  if (path.size() < 2) throw ValidationError("path", "needs at least two points");
  if (n < 2) throw ValidationError("n_steps", "must be >= 2");
  if (path.size() == 2) {
    std::vector<Vec3> out;
    const double d = n - 1;
    for (int k = 0; k < n; ++k) out.push_back(((n - 1 - k) * path[0] + k * path[1]) / d);
    return out;
  }
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < path.size(); ++i) cum.push_back(cum.back() + (path[i] - path[i - 1]).norm());
  std::vector<Vec3> out;
  for (int k = 0; k < n; ++k) {
    const double s = cum.back() * k / (n - 1);
    std::size_t seg = 1;
    while (seg + 1 < path.size() && cum[seg] < s) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    const double t = len > 0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 0.0;
    out.push_back((1.0 - t) * path[seg - 1] + t * path[seg]);
  }
  return out;
}

TransportWaveform design_waveform(const TrapConfiguration& rf_config, std::span<const Vec3> path, int n_steps,
                                  const WellConstraint& well, const WaveformOptions& options) {
  TransportWaveform out;
  out.path.assign(path.begin(), path.end());
  out.step_duration = options.step_duration;
  const auto points = waypoints(path, n_steps);
  SolveOptions solve = options.solve;
  for (int k = 0; k < n_steps; ++k) {
    WellConstraint c = well;
    c.target_position = points[static_cast<std::size_t>(k)];
    StaticSolution s;
    try {
      s = solve_static(rf_config, c, solve);
    } catch (const Error& e) {
      throw InfeasibleError("step " + std::to_string(k) + ": " + e.what());
    }
    if (well.axial_frequency &&
        std::abs(s.axial_frequency.value_or(0.0) / *well.axial_frequency - 1.0) > options.frequency_band)
      throw InfeasibleError("step " + std::to_string(k) + ": axial frequency outside the " +
                            std::to_string(100 * options.frequency_band) + "% band");
    if (well.require_rf_null && s.rf_null_residual > options.rf_field_limit)
      throw InfeasibleError("step " + std::to_string(k) + ": transverse RF field " +
                            std::to_string(s.rf_null_residual) + " V/m at the well exceeds the null limit");
    if (!out.steps.empty()) {
      for (const auto& [name, volts] : s.voltages) {
        const auto& prev = out.steps.back().voltages;
        const auto it = prev.find(name);
        const double jump = std::abs(volts - (it == prev.end() ? 0.0 : it->second));
        if (jump > options.slew_limit)
          throw InfeasibleError("step " + std::to_string(k) + ": " + name + " jumps by " + std::to_string(jump) +
                                " V, above the slew limit");
      }
    }
    out.steps.push_back({s.voltages, 0.0, s.target, s.achieved_position, s.axial_frequency.value_or(0.0)});
    if (solve.continuity_weight > 0) solve.previous = s.voltages;
  }
  return out;
}

namespace {

struct PathProjection {
  double distance = 0.0;
  double arc = 0.0;
};

PathProjection project_on_polyline(std::span<const Vec3> path, const Vec3& p) {
  if (path.size() == 1) return {(p - path[0]).norm(), 0.0};
  PathProjection best{std::numeric_limits<double>::infinity(), 0.0};
  double start = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const Vec3 ab = path[i] - path[i - 1];
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p - path[i - 1]).dot(ab) / len2, 0.0, 1.0) : 0.0;
    const double d = (path[i - 1] + t * ab - p).norm();
    if (d < best.distance) best = {d, start + t * std::sqrt(len2)};
    start += std::sqrt(len2);
  }
  return best;
}

}  // namespace

WaveformReport verify_waveform(const TrapConfiguration& rf_config, const TransportWaveform& waveform,
                               const VerifyOptions& options) {
  WaveformReport report;
  report.all_confining = true;
  std::vector<double> axial;
  for (const auto& step : waveform.steps) {
    StepReport r;
    try {
      const auto config = rf_config.with_static_voltages(step.voltages, step.reference_voltage);
      const auto min = find_minimum(config, step.target);
      r.position = min.position;
      r.target_error = (min.position - step.target).norm();
      if (waveform.path.empty()) {
        r.path_deviation = r.target_error;
      } else {
        const auto proj = project_on_polyline(waveform.path, min.position);
        r.path_deviation = proj.distance;
        r.path_parameter = proj.arc;
      }
      if (r.target_error > options.capture_radius) {
        r.failure = "no confining well near the step target (nearest minimum " + std::to_string(r.target_error * 1e6) +
                    " um away)";
      } else {
        const auto modes = modes_from_hessian(min.energy.hessian, config.ion().mass, config.basis().trap_axis());
        r.frequencies = modes.labeled_frequencies();
        r.axial_frequency = r.frequencies.z();
        r.max_abs_q = mathieu_parameters(config, min.position, modes).q.cwiseAbs().maxCoeff();
        r.rf_field = micromotion(config, min.position).rf_field;
        r.rf_null_residual = transverse_rf_field(config, min.position);
        if (r.max_abs_q >= 0.9) r.failure = "Mathieu |q| outside the adiabatic regime";
        if (options.target_axial_frequency &&
            std::abs(r.axial_frequency / *options.target_axial_frequency - 1.0) > options.frequency_band)
          r.violations.push_back("axial frequency outside the band");
        if (options.rf_field_limit && r.rf_null_residual > *options.rf_field_limit)
          r.violations.push_back("RF field above the null limit");
        if (options.compute_depth) {
          try {
            r.depth = trap_depth(config, min, modes).depth;
          } catch (const Error& e) {
            r.failure = std::string("depth: ") + e.what();
          }
        }
      }
    } catch (const NotConfiningError& e) {
      r.failure = std::string("non-confining: ") + e.what();
    } catch (const Error& e) {
      r.failure = e.what();
    }
    r.confining = r.failure.empty();
    report.all_confining = report.all_confining && r.confining;
    if (r.confining) {
      report.max_path_deviation = std::max(report.max_path_deviation, r.path_deviation);
      report.max_target_error = std::max(report.max_target_error, r.target_error);
      report.max_abs_q = std::max(report.max_abs_q, r.max_abs_q);
      report.max_rf_field = std::max(report.max_rf_field, r.rf_field);
      if (r.depth) report.min_depth = std::min(report.min_depth.value_or(*r.depth), *r.depth);
      axial.push_back(r.axial_frequency);
    }
    report.steps.push_back(std::move(r));
  }
  report.monotone = true;
  for (std::size_t k = 1; k < report.steps.size(); ++k) {
    const auto &a = report.steps[k - 1], &b = report.steps[k];
    // Tolerance: position resolution of the minimum search.
    if (a.confining && b.confining && b.path_parameter < a.path_parameter - 1e-9) report.monotone = false;
  }
  report.all_pass = report.all_confining && report.monotone &&
                    std::all_of(report.steps.begin(), report.steps.end(),
                                [](const StepReport& r) { return r.violations.empty(); });
  if (!axial.empty()) {
    if (options.target_axial_frequency) {
      for (double w : axial)
        report.frequency_ripple = std::max(report.frequency_ripple, std::abs(w / *options.target_axial_frequency - 1));
    } else {
      const auto [mn, mx] = std::minmax_element(axial.begin(), axial.end());
      double mean = 0;
      for (double w : axial) mean += w;
      mean /= static_cast<double>(axial.size());
      report.frequency_ripple = (*mx - *mn) / mean;
    }
  }
  return report;
}

void write_waveform_csv(const TransportWaveform& waveform, std::ostream& out) {
  std::set<std::string> names;
  for (const auto& s : waveform.steps)
    for (const auto& [name, v] : s.voltages) names.insert(name);
  out << "step,t_seconds";
  for (const auto& name : names) out << ",V_" << name;
  out << ",x,y,z,omega_z_Hz\n";
  out << std::setprecision(17);
  for (std::size_t k = 0; k < waveform.steps.size(); ++k) {
    const auto& s = waveform.steps[k];
    out << k << ',' << static_cast<double>(k) * waveform.step_duration;
    for (const auto& name : names) {
      const auto it = s.voltages.find(name);
      out << ',' << (it == s.voltages.end() ? 0.0 : it->second) - s.reference_voltage;
    }
    out << ',' << s.well_position.x() << ',' << s.well_position.y() << ',' << s.well_position.z() << ','
        << rad_to_hz(s.axial_frequency) << '\n';
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParseError("waveform CSV line " + std::to_string(line) + ": not a number: '" + text + "'");
  }
}

}  // namespace

TransportWaveform read_waveform_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("waveform CSV: empty input");
  const auto header = split_csv(line);
  const std::size_t cols = header.size();
  if (cols < 6 || header[0] != "step" || header[1] != "t_seconds" || header[cols - 4] != "x" ||
      header[cols - 3] != "y" || header[cols - 2] != "z" || header[cols - 1] != "omega_z_Hz")
    throw ParseError("waveform CSV: header must be step,t_seconds,V_<name>...,x,y,z,omega_z_Hz");
  std::vector<std::string> names;
  for (std::size_t c = 2; c + 4 < cols; ++c) {
    if (header[c].rfind("V_", 0) != 0 || header[c].size() < 3)
      throw ParseError("waveform CSV: voltage column '" + header[c] + "' must be V_<electrode>");
    names.push_back(header[c].substr(2));
  }

  TransportWaveform out;
  std::vector<double> times;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != cols)
      throw ParseError("waveform CSV line " + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                       " fields, got " + std::to_string(cells.size()));
    WaveformStep s;
    times.push_back(parse_number(cells[1], lineno));
    for (std::size_t i = 0; i < names.size(); ++i) s.voltages[names[i]] = parse_number(cells[2 + i], lineno);
    s.well_position = {parse_number(cells[cols - 4], lineno), parse_number(cells[cols - 3], lineno),
                       parse_number(cells[cols - 2], lineno)};
    s.target = s.well_position;
    s.axial_frequency = hz_to_rad(parse_number(cells[cols - 1], lineno));
    out.steps.push_back(std::move(s));
  }
  if (out.steps.empty()) throw ParseError("waveform CSV: no steps");
  out.step_duration = times.size() >= 2 ? times[1] - times[0] : 0.0;
  for (const auto& s : out.steps) out.path.push_back(s.target);
  return out;
}

}  // namespace iontrap
