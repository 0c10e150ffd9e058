#pragma once

// Heating-rate analysis: field noise <-> quanta/s, one-dimensional Doppler
// recooling fluorescence, its likelihood fit, and heating rates from delay
// series.

#include "iontrap/trapchar.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace iontrap {

struct NoiseSpec {
  double field_psd = 0.0;  // S_E, (V/m)^2/Hz
  double frequency = 0.0;  // rad/s
  void validate() const;
};

/// ndot = q^2 S_E / (4 m hbar omega), quanta/s.
double quanta_rate_from_field_noise(const NoiseSpec& noise, const IonSpecies& ion);
/// Inverse of quanta_rate_from_field_noise: S_E for a given rate.
double field_noise_from_quanta_rate(double quanta_per_s, double frequency, const IonSpecies& ion);

struct LaserParams {
  double wavelength = 0.0;  // m
  double linewidth = 0.0;   // Gamma, rad/s
  double detuning = 0.0;    // delta, rad/s; negative is red
  double saturation = 0.0;  // s0
  double projection = 1.0;  // cosine between beam and motional axis
  double detection_efficiency = 1.0;
  void validate() const;
  double wavenumber() const { return two_pi / wavelength; }
};
/// Keys: wavelength_m, linewidth_rad_s, detuning_rad_s, saturation,
/// projection, detection_efficiency. Throws ParseError / ValidationError.
LaserParams laser_from_json(const nlohmann::json& j);

/// Doppler cooling of one secular mode by one beam. The excited-state
/// population rho(v) = (s0/2) / (1 + s0 + (2 (delta - k v cos) / Gamma)^2) is
/// averaged over the oscillation phase in closed form; recoil heating from
/// absorption (cos^2) and isotropic emission (1/3) sets the cold limit.
class RecoolingModel {
 public:
  /// Throws ValidationError for delta >= 0 (heating configuration).
  RecoolingModel(IonSpecies ion, LaserParams laser);

  const IonSpecies& ion() const noexcept { return ion_; }
  const LaserParams& laser() const noexcept { return laser_; }

  /// Phase-averaged photon scattering rate at secular energy E, 1/s.
  double scattering_rate(double energy) const;
  /// dE/dt including recoil heating, J/s.
  double energy_rate(double energy) const;
  double cold_scattering_rate() const { return scattering_rate(0.0); }
  /// Energy where cooling balances recoil heating.
  double steady_state_energy() const;
  double recoil_energy() const;  // hbar^2 k^2 / (2 m)

  /// E(t) at the requested (non-decreasing, >= 0) times.
  std::vector<double> energy_trajectory(double initial_energy, std::span<const double> times) const;
  /// Expected detected photons in [t_k, t_k + bin) for k < n_bins.
  std::vector<double> expected_counts(double initial_energy, double bin, int n_bins) const;

 private:
  IonSpecies ion_;
  LaserParams laser_;
};

struct RecoolingCurve {
  double bin_width = 0.0;       // s
  std::vector<double> times;    // bin starts, s
  std::vector<double> counts;   // photons per bin (expected or sampled)
  double trap_frequency = 0.0;  // rad/s, metadata
  std::string ion;              // metadata
  void validate() const;
};

RecoolingCurve recooling_curve(const RecoolingModel& model, double initial_energy, double trap_frequency, double bin,
                               int n_bins);
/// Poisson-sampled copy of an expected curve.
RecoolingCurve poisson_sample(const RecoolingCurve& expected, std::uint64_t seed);

struct RecoolingFitOptions {
  /// Also fit an overall count scale (profiled analytically).
  bool fit_rate_scale = false;
  /// Search bracket; zero picks 1e-3 and 1e7 times the steady-state energy.
  double energy_min = 0.0;
  double energy_max = 0.0;
  int grid_points = 41;  // log-spaced scan before the line search
};

struct RecoolingFit {
  double energy = 0.0;        // J
  double energy_sigma = 0.0;  // 1 sigma from the likelihood curvature
  double rate_scale = 1.0;
  double negative_log_likelihood = 0.0;
  /// False when the scan found a second local minimum behind a barrier of
  /// more than 0.5 in log-likelihood; the estimate is then the global scan
  /// minimum over the full bracket.
  bool unimodal = true;
  double bracket_low = 0.0, bracket_high = 0.0;
};

/// Poisson maximum likelihood over the initial energy. Throws
/// ValidationError for fewer than 10 bins or when the best-fit model has
/// not reached its plateau by the last bin.
RecoolingFit fit_recooling(const RecoolingCurve& curve, const RecoolingModel& model,
                           const RecoolingFitOptions& options = {});

struct DelayPoint {
  double delay = 0.0;   // s
  double energy = 0.0;  // J
  double sigma = 0.0;   // J; all zero means unweighted
};

struct HeatingRate {
  double energy_rate = 0.0;  // dE/dt, J/s
  double energy_rate_sigma = 0.0;
  double intercept = 0.0;  // J
  double quanta_per_s = 0.0;
  double quanta_per_s_sigma = 0.0;
  double field_psd = 0.0;  // (V/m)^2/Hz
  double field_psd_sigma = 0.0;
  /// Slope more than 2 sigma below zero.
  bool inconsistent = false;
};

/// Weighted linear regression of energy against delay (weights 1/sigma^2;
/// unweighted fits take sigma from the residual scatter). Needs >= 3 points.
HeatingRate heating_rate_from_delays(std::span<const DelayPoint> series, const IonSpecies& ion,
                                     double trap_frequency);

/// CSV: t_seconds,counts.
void write_curve_csv(const RecoolingCurve& curve, std::ostream& out);
RecoolingCurve read_curve_csv(std::istream& in);

}  // namespace iontrap
