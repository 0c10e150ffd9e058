#include "iontrap/floquet.hpp"

#include "iontrap/errors.hpp"

#include <boost/math/tools/minima.hpp>
#include <boost/numeric/odeint.hpp>
#include <fftw3.h>

#include <array>
#include <cmath>
#include <limits>
#include <memory>

namespace iontrap {

namespace {

// Scaled state: (r - r0) / unit and v / (unit * Omega), time tau = Omega t.
using State = std::array<double, 6>;

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
struct PlanDestroy {
  void operator()(fftw_plan p) const { fftw_destroy_plan(p); }
};
using Plan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDestroy>;

}  // namespace

Trajectory integrate_trajectory(const TrapConfiguration& config, const Vec3& r0, const Vec3& v0, double duration,
                                int samples, const TrajectoryOptions& options) {
  if (samples < 2) throw ValidationError("samples", "need at least 2 samples");
  if (!(duration > 0)) throw ValidationError("duration", "must be > 0");
  const double omega = config.rf_frequency();
  const double unit = options.length_unit > 0 ? options.length_unit : config.basis().length_scale();
  const double accel = config.ion().charge / (config.ion().mass * unit * omega * omega);
  const double amplitude = config.rf_amplitude();
  auto system = [&](const State& s, State& ds, double tau) {
    const Vec3 r = r0 + unit * Vec3(s[0], s[1], s[2]);
    const double drive = amplitude * std::cos(options.frozen_rf_phase ? *options.frozen_rf_phase : tau);
    std::array<FieldDerivs, 2> f;
    config.basis().evaluate_many(config.weights(), r, kGradient, f);
    const Vec3 a = -accel * (f[0].gradient + drive * f[1].gradient);
    for (int i = 0; i < 3; ++i) {
      ds[i] = s[i + 3];
      ds[i + 3] = a[i];
    }
  };

  const Vec3 vs = v0 / (unit * omega);
  State state{0, 0, 0, vs.x(), vs.y(), vs.z()};
  const double tau_end = omega * duration;
  const double dtau = tau_end / (samples - 1);

  Trajectory out;
  out.times.reserve(static_cast<std::size_t>(samples));
  out.positions.reserve(static_cast<std::size_t>(samples));
  out.velocities.reserve(static_cast<std::size_t>(samples));
  auto observe = [&](const State& s, double tau) {
    if (out.times.size() == static_cast<std::size_t>(samples)) return;
    out.times.push_back(tau / omega);
    out.positions.push_back(r0 + unit * Vec3(s[0], s[1], s[2]));
    out.velocities.push_back(unit * omega * Vec3(s[3], s[4], s[5]));
  };
  namespace odeint = boost::numeric::odeint;
  // Steps are capped at 1/12 of an RF cycle so trial steps never reach far
  // outside the region the motion explores.
  auto stepper = odeint::make_controlled<odeint::runge_kutta_fehlberg78<State>>(options.tolerance, options.tolerance,
                                                                               two_pi / 12);
  try {
    odeint::integrate_n_steps(stepper, system, state, 0.0, dtau, samples - 1, observe);
  } catch (const EvaluationError& e) {
    throw NumericalError(std::string("trajectory left the field region (unstable motion): ") + e.what());
  }
  return out;
}

double frozen_field_energy(const TrapConfiguration& config, double rf_phase, const Vec3& r, const Vec3& v) {
  std::array<FieldDerivs, 2> f;
  config.basis().evaluate_many(config.weights(), r, kValue, f);
  const double potential = f[0].value + config.rf_amplitude() * std::cos(rf_phase) * f[1].value;
  return 0.5 * config.ion().mass * v.squaredNorm() + config.ion().charge * potential;
}

double dominant_frequency(std::span<const double> signal, double dt, double max_frequency) {
  const auto n = signal.size();
  if (n < 16) throw ValidationError("signal", "need at least 16 samples");
  double mean = 0;
  for (double s : signal) mean += s;
  mean /= static_cast<double>(n);
  std::vector<double> window(n), centred(n);
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(two_pi * static_cast<double>(i) / static_cast<double>(n - 1)));
    centred[i] = signal[i] - mean;
  }

  const std::size_t padded = 4 * n;
  std::unique_ptr<double, FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * padded)));
  std::unique_ptr<fftw_complex, FftwFree> spectrum(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (padded / 2 + 1))));
  const Plan plan(fftw_plan_dft_r2c_1d(static_cast<int>(padded), in.get(), spectrum.get(), FFTW_ESTIMATE));
  for (std::size_t i = 0; i < padded; ++i) in.get()[i] = i < n ? window[i] * centred[i] : 0.0;
  fftw_execute(plan.get());

  const double bin = two_pi / (static_cast<double>(padded) * dt);
  std::size_t best = 0;
  double best_power = -1;
  for (std::size_t k = 1; k <= padded / 2 && k * bin < max_frequency; ++k) {
    const double re = spectrum.get()[k][0], im = spectrum.get()[k][1];
    if (re * re + im * im > best_power) {
      best_power = re * re + im * im;
      best = k;
    }
  }
  if (best == 0) throw NumericalError("no spectral line below the requested frequency");

  // Windowed least squares of a + b cos(w t) + c sin(w t); the best
  // frequency minimizes the residual.
  auto residual = [&](double w) {
    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      const Eigen::Vector3d basis(1.0, std::cos(w * t), std::sin(w * t));
      normal += window[i] * basis * basis.transpose();
      rhs += window[i] * centred[i] * basis;
    }
    const Eigen::Vector3d c = normal.ldlt().solve(rhs);
    // Summed directly: ss - rhs.c cancels near an exact fit.
    double r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      const double e = centred[i] - c[0] - c[1] * std::cos(w * t) - c[2] * std::sin(w * t);
      r += window[i] * e * e;
    }
    return r;
  };
  // Search in bin units: the minimizer's tolerance is relative to the
  // abscissa.
  const double centre = static_cast<double>(best) * bin;
  const auto offset = boost::math::tools::brent_find_minima([&](double u) { return residual(centre + u * bin); },
                                                            -1.0, 1.0, std::numeric_limits<double>::digits);
  return centre + offset.first * bin;
}

Vec3 verify_floquet(const TrapConfiguration& config, const Vec3& minimum, const SecularModes& modes,
                    const FloquetOptions& options) {
  if (options.rf_cycles < 16 || options.samples_per_cycle < 4)
    throw ValidationError("floquet", "need at least 16 RF cycles and 4 samples per cycle");
  const double omega = config.rf_frequency();
  const double offset = options.displacement * config.basis().length_scale();
  // Start on the micromotion orbit (drive cos(Omega t) displaces the ion by
  // q A grad(phi_RF) / (m Omega^2) at t = 0) so the RF field at the minimum
  // does not itself kick the secular motion.
  const auto rf = config.basis().evaluate(config.weights().col(1), minimum, kGradient);
  const Vec3 orbit = config.ion().charge * config.rf_amplitude() * rf.gradient / (config.ion().mass * omega * omega);
  const Vec3 r0 = minimum + orbit + offset * modes.axes.rowwise().sum() / std::sqrt(3.0);
  const int samples = options.rf_cycles * options.samples_per_cycle + 1;
  const double duration = options.rf_cycles * two_pi / omega;
  TrajectoryOptions topt;
  topt.tolerance = options.tolerance;
  topt.length_unit = offset;
  const auto traj = integrate_trajectory(config, r0, Vec3::Zero(), duration, samples, topt);

  const double dt = duration / (samples - 1);
  Vec3 out;
  std::vector<double> signal(traj.positions.size());
  for (int k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < signal.size(); ++i) signal[i] = (traj.positions[i] - minimum).dot(modes.axes.col(k));
    out[k] = dominant_frequency(signal, dt, 0.5 * omega);
  }
  return out;
}

}  // namespace iontrap
