#include "iontrap/heating.hpp"

#include "iontrap/errors.hpp"

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace iontrap {

void NoiseSpec::validate() const {
  if (!(field_psd >= 0) || !std::isfinite(field_psd)) throw ValidationError("S_E", "must be finite and >= 0");
  if (!(frequency > 0) || !std::isfinite(frequency)) throw ValidationError("frequency", "must be > 0");
}

double quanta_rate_from_field_noise(const NoiseSpec& noise, const IonSpecies& ion) {
  noise.validate();
  ion.validate();
  return ion.charge * ion.charge * noise.field_psd / (4.0 * ion.mass * constants::hbar * noise.frequency);
}

double field_noise_from_quanta_rate(double quanta_per_s, double frequency, const IonSpecies& ion) {
  if (!(frequency > 0)) throw ValidationError("frequency", "must be > 0");
  ion.validate();
  return quanta_per_s * 4.0 * ion.mass * constants::hbar * frequency / (ion.charge * ion.charge);
}

void LaserParams::validate() const {
  if (!(wavelength > 0)) throw ValidationError("wavelength", "must be > 0");
  if (!(linewidth > 0)) throw ValidationError("linewidth", "must be > 0");
  if (!std::isfinite(detuning)) throw ValidationError("detuning", "must be finite");
  if (!(saturation > 0)) throw ValidationError("saturation", "must be > 0");
  if (!(std::abs(projection) <= 1)) throw ValidationError("projection", "|projection| must be <= 1");
  if (!(detection_efficiency > 0 && detection_efficiency <= 1))
    throw ValidationError("detection_efficiency", "must be in (0, 1]");
}

LaserParams laser_from_json(const nlohmann::json& j) {
  LaserParams p;
  try {
    p.wavelength = j.at("wavelength_m").get<double>();
    p.linewidth = j.at("linewidth_rad_s").get<double>();
    p.detuning = j.at("detuning_rad_s").get<double>();
    p.saturation = j.at("saturation").get<double>();
    p.projection = j.at("projection").get<double>();
    p.detection_efficiency = j.value("detection_efficiency", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("laser parameters: ") + e.what());
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Recooling model

RecoolingModel::RecoolingModel(IonSpecies ion, LaserParams laser) : ion_(std::move(ion)), laser_(laser) {
  ion_.validate();
  laser_.validate();
  if (!(laser_.detuning < 0)) throw ValidationError("detuning", "must be red (< 0) for cooling");
  if (laser_.projection == 0) throw ValidationError("projection", "beam has no component along the mode");
}

namespace {

struct PhaseAverage {
  double rho = 0.0;    // <rho_ee>
  double s_rho = 0.0;  // <sin(phase) rho_ee>
};

// With x = X - C sin(phase), 1 / (a^2 + x^2) = Im[1 / (w - C sin)] / a for
// w = X - i a, and <1 / (w - C sin)> = 1 / r with r = w sqrt(1 - C^2 / w^2).
// 1 - C^2/w^2 stays off the negative real axis for X != 0, so the principal
// root is the branch continuous from C = 0.
PhaseAverage phase_average(const LaserParams& l, double amplitude_velocity) {
  const double a = std::sqrt(1.0 + l.saturation);
  const std::complex<double> w(2.0 * l.detuning / l.linewidth, -a);
  const double c = 2.0 * l.wavenumber() * l.projection * amplitude_velocity / l.linewidth;
  const std::complex<double> r = w * std::sqrt(1.0 - c * c / (w * w));
  const double pre = 0.5 * l.saturation / a;
  // <sin / (w - C sin)> = (w / r - 1) / C = C / (r (w + r)), free of cancellation.
  return {pre * std::imag(1.0 / r), pre * std::imag(c / (r * (w + r)))};
}

}  // namespace

double RecoolingModel::recoil_energy() const {
  const double hk = constants::hbar * laser_.wavenumber();
  return hk * hk / (2.0 * ion_.mass);
}

double RecoolingModel::scattering_rate(double energy) const {
  const double v0 = std::sqrt(2.0 * std::max(energy, 0.0) / ion_.mass);
  return laser_.linewidth * phase_average(laser_, v0).rho;
}

double RecoolingModel::energy_rate(double energy) const {
  const double v0 = std::sqrt(2.0 * std::max(energy, 0.0) / ion_.mass);
  const auto avg = phase_average(laser_, v0);
  const double eta = laser_.projection;
  const double cooling = constants::hbar * laser_.wavenumber() * eta * laser_.linewidth * v0 * avg.s_rho;
  const double recoil = recoil_energy() * (eta * eta + 1.0 / 3.0) * laser_.linewidth * avg.rho;
  return cooling + recoil;
}

double RecoolingModel::steady_state_energy() const {
  double hi = recoil_energy();
  while (energy_rate(hi) >= 0) {
    hi *= 2;
    if (hi > 1e-15) throw NumericalError("recooling: no steady state (cooling never beats recoil heating)");
  }
  std::uintmax_t iters = 200;
  const auto [lo_e, hi_e] = boost::math::tools::toms748_solve([this](double e) { return energy_rate(e); }, 0.0, hi,
                                                              boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (lo_e + hi_e);
}

namespace {

namespace odeint = boost::numeric::odeint;
using State = std::array<double, 2>;  // (E / E_ref, photons / (R_cold * t_ref))

}  // namespace

std::vector<double> RecoolingModel::energy_trajectory(double initial_energy, std::span<const double> times) const {
  if (!(initial_energy >= 0)) throw ValidationError("initial_energy", "must be >= 0");
  if (times.empty()) return {};
  if (times.front() < 0 || !std::is_sorted(times.begin(), times.end()))
    throw ValidationError("times", "must be non-negative and non-decreasing");
  const double e_ref = std::max(initial_energy, steady_state_energy());
  auto rhs = [&](const State& y, State& dy, double) {
    dy[0] = energy_rate(y[0] * e_ref) / e_ref;
    dy[1] = 0.0;
  };
  std::vector<double> grid{0.0};
  grid.insert(grid.end(), times.begin(), times.end());
  std::vector<double> out;
  State y{initial_energy / e_ref, 0.0};
  auto stepper = odeint::make_controlled(1e-13, 1e-11, odeint::runge_kutta_fehlberg78<State>());
  odeint::integrate_times(stepper, rhs, y, grid.begin(), grid.end(), 0.1 / laser_.linewidth,
                          [&](const State& s, double) { out.push_back(std::max(s[0], 0.0) * e_ref); });
  out.erase(out.begin());
  return out;
}

std::vector<double> RecoolingModel::expected_counts(double initial_energy, double bin, int n_bins) const {
  if (!(initial_energy >= 0)) throw ValidationError("initial_energy", "must be >= 0");
  if (!(bin > 0)) throw ValidationError("bin", "must be > 0");
  if (n_bins < 1) throw ValidationError("n_bins", "must be >= 1");
  const double e_ref = std::max(initial_energy, steady_state_energy());
  const double r_ref = cold_scattering_rate();
  // Time in bins; second state is photons in units of r_ref * bin.
  auto rhs = [&](const State& y, State& dy, double) {
    // The exact flow never goes below the steady state; clip rounding.
    const double e = std::max(y[0], 0.0) * e_ref;
    dy[0] = bin * energy_rate(e) / e_ref;
    dy[1] = scattering_rate(e) / r_ref;
  };
  std::vector<double> edges(static_cast<std::size_t>(n_bins) + 1);
  std::iota(edges.begin(), edges.end(), 0.0);
  std::vector<double> cumulative;
  State y{initial_energy / e_ref, 0.0};
  auto stepper = odeint::make_controlled(1e-13, 1e-12, odeint::runge_kutta_fehlberg78<State>());
  odeint::integrate_times(stepper, rhs, y, edges.begin(), edges.end(), 1e-3,
                          [&](const State& s, double) { cumulative.push_back(s[1]); });
  std::vector<double> counts(static_cast<std::size_t>(n_bins));
  const double scale = laser_.detection_efficiency * r_ref * bin;
  for (std::size_t k = 0; k < counts.size(); ++k) counts[k] = scale * (cumulative[k + 1] - cumulative[k]);
  return counts;
}

// ---------------------------------------------------------------------------
// Curves

void RecoolingCurve::validate() const {
  if (!(bin_width > 0)) throw ValidationError("bin_width", "must be > 0");
  if (times.size() != counts.size()) throw ValidationError("curve", "times and counts differ in length");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw ValidationError("curve", "bin times must be strictly increasing");
  for (double c : counts)
    if (!(c >= 0) || !std::isfinite(c)) throw ValidationError("curve", "counts must be finite and >= 0");
}

RecoolingCurve recooling_curve(const RecoolingModel& model, double initial_energy, double trap_frequency, double bin,
                               int n_bins) {
  RecoolingCurve c;
  c.bin_width = bin;
  c.counts = model.expected_counts(initial_energy, bin, n_bins);
  for (int k = 0; k < n_bins; ++k) c.times.push_back(k * bin);
  c.trap_frequency = trap_frequency;
  c.ion = model.ion().label;
  return c;
}

RecoolingCurve poisson_sample(const RecoolingCurve& expected, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RecoolingCurve out = expected;
  for (double& c : out.counts) {
    std::poisson_distribution<long long> d(c);
    c = c > 0 ? static_cast<double>(d(rng)) : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fit

RecoolingFit fit_recooling(const RecoolingCurve& curve, const RecoolingModel& model,
                           const RecoolingFitOptions& options) {
  curve.validate();
  if (curve.counts.size() < 10) throw ValidationError("curve", "needs at least 10 bins");
  if (options.grid_points < 5) throw ValidationError("grid_points", "must be >= 5");
  const int n = static_cast<int>(curve.counts.size());
  const double e_ss = model.steady_state_energy();
  const double lo = options.energy_min > 0 ? options.energy_min : 1e-3 * e_ss;
  const double hi = options.energy_max > 0 ? options.energy_max : 1e7 * e_ss;
  if (!(lo < hi)) throw ValidationError("energy bracket", "needs energy_min < energy_max");
  const double total = std::accumulate(curve.counts.begin(), curve.counts.end(), 0.0);

  // Profile likelihood in log-energy; the optional scale has a closed-form
  // maximizer, sum(n) / sum(mu).
  auto evaluate = [&](double log_e, double* scale_out) {
    const auto mu = model.expected_counts(std::exp(log_e), curve.bin_width, n);
    const double scale = options.fit_rate_scale ? total / std::accumulate(mu.begin(), mu.end(), 0.0) : 1.0;
    double nll = 0;
    for (int k = 0; k < n; ++k) {
      const double m = std::max(scale * mu[static_cast<std::size_t>(k)], std::numeric_limits<double>::min());
      nll += m - curve.counts[static_cast<std::size_t>(k)] * std::log(m);
    }
    if (scale_out) *scale_out = scale;
    return nll;
  };

  const int g = options.grid_points;
  std::vector<double> xs(static_cast<std::size_t>(g)), fs(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) {
    xs[i] = std::log(lo) + (std::log(hi) - std::log(lo)) * i / (g - 1);
    fs[i] = evaluate(xs[i], nullptr);
  }
  const auto best = static_cast<int>(std::min_element(fs.begin(), fs.end()) - fs.begin());
  // A second local minimum counts only behind a barrier above half a unit
  // of log-likelihood (1 sigma); shallower structure is not resolved.
  const double tol = 1e-9 * (1.0 + std::abs(fs[best]));
  bool unimodal = true;
  for (int i = 0; i < g; ++i) {
    const bool left = i == 0 || fs[i] < fs[i - 1] - tol;
    const bool right = i == g - 1 || fs[i] < fs[i + 1] - tol;
    if (!left || !right || i == best) continue;
    const double barrier = *std::max_element(fs.begin() + std::min(i, best), fs.begin() + std::max(i, best) + 1);
    if (barrier - fs[i] > 0.5) unimodal = false;
  }

  RecoolingFit fit;
  fit.bracket_low = lo;
  fit.bracket_high = hi;
  fit.unimodal = unimodal;
  const double a = xs[std::max(best - 1, 0)], b = xs[std::min(best + 1, g - 1)];
  std::uintmax_t iters = 200;
  const auto [x, f] =
      boost::math::tools::brent_find_minima([&](double v) { return evaluate(v, nullptr); }, a, b, 40, iters);
  fit.energy = std::exp(x);
  fit.negative_log_likelihood = evaluate(x, &fit.rate_scale);

  const double h = 1e-2;
  const double curvature = (evaluate(x + h, nullptr) - 2 * f + evaluate(x - h, nullptr)) / (h * h);
  fit.energy_sigma = curvature > 0 ? fit.energy / std::sqrt(curvature) : std::numeric_limits<double>::infinity();

  const auto mu = model.expected_counts(fit.energy, curve.bin_width, n);
  const double plateau = model.laser().detection_efficiency * model.scattering_rate(e_ss) * curve.bin_width;
  if (std::abs(mu.back() / plateau - 1.0) > 0.01)
    throw ValidationError("curve", "no post-recooling plateau: the best-fit ion is still hot in the last bin");
  return fit;
}

// ---------------------------------------------------------------------------
// Delay series

HeatingRate heating_rate_from_delays(std::span<const DelayPoint> series, const IonSpecies& ion,
                                     double trap_frequency) {
  if (series.size() < 3) throw ValidationError("series", "needs at least 3 delay points");
  if (!(trap_frequency > 0)) throw ValidationError("trap_frequency", "must be > 0");
  const bool weighted = std::any_of(series.begin(), series.end(), [](const DelayPoint& p) { return p.sigma != 0; });
  double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : series) {
    if (weighted && !(p.sigma > 0)) throw ValidationError("series", "sigma must be > 0 for every point or zero for all");
    const double w = weighted ? 1.0 / (p.sigma * p.sigma) : 1.0;
    s += w;
    sx += w * p.delay;
    sy += w * p.energy;
    sxx += w * p.delay * p.delay;
    sxy += w * p.delay * p.energy;
  }
  const double det = s * sxx - sx * sx;
  if (!(det > 0)) throw ValidationError("series", "delays must not all be equal");
  HeatingRate r;
  r.energy_rate = (s * sxy - sx * sy) / det;
  r.intercept = (sxx * sy - sx * sxy) / det;
  double variance_scale = 1.0;
  if (!weighted) {
    double chi2 = 0;
    for (const auto& p : series) chi2 += std::pow(p.energy - r.intercept - r.energy_rate * p.delay, 2);
    variance_scale = chi2 / static_cast<double>(series.size() - 2);
  }
  r.energy_rate_sigma = std::sqrt(variance_scale * s / det);
  const double quantum = constants::hbar * trap_frequency;
  r.quanta_per_s = r.energy_rate / quantum;
  r.quanta_per_s_sigma = r.energy_rate_sigma / quantum;
  r.field_psd = field_noise_from_quanta_rate(r.quanta_per_s, trap_frequency, ion);
  r.field_psd_sigma = field_noise_from_quanta_rate(r.quanta_per_s_sigma, trap_frequency, ion);
  r.inconsistent = r.energy_rate < -2.0 * r.energy_rate_sigma;
  return r;
}

// ---------------------------------------------------------------------------
// CSV

void write_curve_csv(const RecoolingCurve& curve, std::ostream& out) {
  out << "t_seconds,counts\n" << std::setprecision(17);
  for (std::size_t k = 0; k < curve.times.size(); ++k) out << curve.times[k] << ',' << curve.counts[k] << '\n';
}

RecoolingCurve read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("curve CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t_seconds,counts") throw ParseError("curve CSV: header must be t_seconds,counts");
  RecoolingCurve c;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
        throw std::invalid_argument("field count");
      std::size_t u1 = 0, u2 = 0;
      const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
      const double t = std::stod(a, &u1), n = std::stod(b, &u2);
      if (u1 != a.size() || u2 != b.size()) throw std::invalid_argument("trailing characters");
      c.times.push_back(t);
      c.counts.push_back(n);
    } catch (const std::exception&) {
      throw ParseError("curve CSV line " + std::to_string(lineno) + ": expected two numbers");
    }
  }
  if (c.times.size() < 2) throw ParseError("curve CSV: needs at least two bins");
  c.bin_width = c.times[1] - c.times[0];
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ParseError(std::string("curve CSV: ") + e.what());
  }
  return c;
}

}  // namespace iontrap
