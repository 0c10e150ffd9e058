#pragma once

// Direct time-dependent integration of the ion in the full RF field; the
// oracle for the pseudopotential approximation.

#include "iontrap/trapchar.hpp"

#include <optional>
#include <vector>

namespace iontrap {

struct TrajectoryOptions {
  /// Tolerances are relative and absolute on the state scaled by this length
  /// (0 picks the basis length scale) and by Omega; it should match the size
  /// of the motion.
  double tolerance = 1e-12;
  double length_unit = 0.0;  // m
  /// Hold the RF at cos(phase) instead of cos(Omega t): a static field
  /// whose total energy is conserved.
  std::optional<double> frozen_rf_phase;
};

struct Trajectory {
  std::vector<double> times;  // s
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
};

/// Integrates m r'' = -q grad[ static + A cos(Omega t) phi_RF ] with an
/// adaptive 7(8) Runge-Kutta-Fehlberg scheme, sampling at `samples` equally
/// spaced times over [0, duration]. Throws NumericalError when the ion leaves
/// the field region.
Trajectory integrate_trajectory(const TrapConfiguration& config, const Vec3& r0, const Vec3& v0, double duration,
                                int samples, const TrajectoryOptions& options = {});

/// Kinetic plus potential energy with the RF frozen at `rf_phase`, joules.
double frozen_field_energy(const TrapConfiguration& config, double rf_phase, const Vec3& r, const Vec3& v);

struct FloquetOptions {
  int rf_cycles = 2000;
  int samples_per_cycle = 8;
  /// Initial displacement from the minimum, in units of the basis length
  /// scale; split equally over the principal axes.
  double displacement = 1e-4;
  double tolerance = 1e-12;
};

/// Secular frequency (rad/s) of each principal axis of `modes`, in the same
/// order: dominant spectral line of the projected motion below Omega / 2.
Vec3 verify_floquet(const TrapConfiguration& config, const Vec3& minimum, const SecularModes& modes,
                    const FloquetOptions& options = {});

/// Frequency (rad/s) of the strongest line of a uniformly sampled signal in
/// (0, max_frequency): Hann-windowed zero-padded FFT, then a windowed
/// single-tone least-squares fit.
double dominant_frequency(std::span<const double> signal, double dt, double max_frequency);

}  // namespace iontrap
