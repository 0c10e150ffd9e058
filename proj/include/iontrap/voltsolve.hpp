#pragma once

// Inverse problems: static voltages for a prescribed well, and transport
// waveforms as sequences of such wells.

#include "iontrap/trapchar.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace iontrap {

struct VoltageBounds {
  double lower = -10.0;
  double upper = 10.0;
};

struct WellConstraint {
  Vec3 target_position = Vec3::Zero();
  /// Axial secular frequency, rad/s.
  std::optional<double> axial_frequency;
  /// Columns: target directions of the modes labelled x, y, z. Without it
  /// only the axial mode is aligned with the trap axis.
  std::optional<Mat3> axes;
  /// Move the target transversely onto the nearest RF null first.
  bool require_rf_null = false;
  VoltageBounds default_bounds;
  std::map<std::string, VoltageBounds> bounds;  // per-electrode overrides

  /// Throws ValidationError for inverted bounds or non-orthonormal axes.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Linear core

/// argmin ||A v - b||^2 + lambda ||v - prior||^2 subject to lo <= v <= hi
/// (lambda > 0), by a primal active-set method started from the clamped
/// prior. Exact up to linear-solve rounding.
Eigen::VectorXd solve_regularized(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda,
                                  const Eigen::VectorXd& prior, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

/// Tikhonov parameter at the corner (maximum curvature) of the L-curve
/// (log residual norm against log solution norm) over
/// lambda in [1e-12, 1] x ||A||^2.
double l_curve_lambda(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

/// Scaled constraint rows at one point. Gradient rows are forces over
/// (k_ref * L) and curvature rows curvatures over k_ref, so residuals read
/// as a position error in units of L and a relative curvature error.
struct ConstraintRows {
  Eigen::MatrixXd matrix;  // one column per free electrode
  Eigen::VectorXd rhs;
  std::vector<std::string> labels;
};
ConstraintRows constraint_rows(const TrapConfiguration& rf_config, const WellConstraint& constraint,
                               std::span<const std::size_t> free_electrodes, const Vec3& point,
                               const Eigen::VectorXd& fixed_static);

// ---------------------------------------------------------------------------
// Static solve

struct SolveOptions {
  /// Tikhonov parameter; unset picks the L-curve corner.
  std::optional<double> lambda;
  /// Free electrodes; empty means every DC electrode.
  std::vector<std::string> electrodes;
  /// Voltages of DC electrodes that are not free (others stay at 0).
  std::map<std::string, double> fixed;
  /// Continuity: adds mu ||V - previous||^2 (previous over free electrodes).
  double continuity_weight = 0.0;
  std::map<std::string, double> previous;
  int max_fixed_point = 5;
  double position_tolerance = 0.1e-6;  // m
  /// Achieved axial frequency off by more than this (relative) is infeasible.
  double frequency_tolerance = 0.10;
  /// Achieved well farther than this from the target is infeasible.
  double position_limit = 1e-6;  // m
};

struct StaticSolution {
  std::map<std::string, double> voltages;  // free and fixed DC electrodes
  double lambda = 0.0;
  int fixed_point_iterations = 0;
  int tikhonov_iterations = 0;
  Vec3 target = Vec3::Zero();  // after any RF-null projection
  Vec3 achieved_position = Vec3::Zero();
  double position_error = 0.0;  // m
  std::optional<double> axial_frequency;  // achieved, rad/s
  double rf_field = 0.0;                  // V/m at the achieved minimum
  /// RF field transverse to the trap axis (the part DC voltages can null).
  double rf_null_residual = 0.0;  // V/m
  SecularModes modes;
  std::vector<std::string> active_bounds;
};

/// Voltages producing the constrained well for the RF drive of `rf_config`
/// (its static voltages are ignored). Constraint rows are linear in the
/// voltages; the regularized problem is solved by nonstationary iterated
/// Tikhonov (each pass an exact bounded solve with the previous pass as
/// prior, lambda halving from its initial value) until the rows are met. The
/// linearization point is then shifted by the achieved position error
/// (fixed point). Throws InfeasibleError when the well misses the targets.
StaticSolution solve_static(const TrapConfiguration& rf_config, const WellConstraint& constraint,
                            const SolveOptions& options = {});

// ---------------------------------------------------------------------------
// Transport

struct WaveformStep {
  std::map<std::string, double> voltages;
  double reference_voltage = 0.0;
  Vec3 target = Vec3::Zero();
  Vec3 well_position = Vec3::Zero();
  double axial_frequency = 0.0;  // rad/s, 0 when unknown
};

struct TransportWaveform {
  std::vector<WaveformStep> steps;
  double step_duration = 0.0;  // s
  std::vector<Vec3> path;      // polyline
};

struct WaveformOptions {
  SolveOptions solve;
  double step_duration = 10e-6;  // s
  /// Largest allowed voltage change between steps on any electrode.
  double slew_limit = 2.0;  // V
  /// Per-step acceptance: axial frequency within this relative band of the
  /// template target, and (with require_rf_null) transverse RF field below
  /// the limit.
  double frequency_band = 0.05;
  double rf_field_limit = 10.0;  // V/m
};

/// Equal-arc-length waypoints along `path` (at least two points), n >= 2.
/// Waypoints are formed symmetrically in the segment ends, so a reversed
/// path yields bitwise the reversed waypoints.
std::vector<Vec3> waypoints(std::span<const Vec3> path, int n);

/// One solve_static per waypoint using `well` as a template (its target
/// replaced). Throws InfeasibleError naming the failing step, when a step
/// misses the frequency band or RF-null limit, or when a step changes any
/// voltage by more than the slew limit.
TransportWaveform design_waveform(const TrapConfiguration& rf_config, std::span<const Vec3> path, int n_steps,
                                  const WellConstraint& well, const WaveformOptions& options = {});

struct StepReport {
  bool confining = false;
  std::string failure;  // empty when confining
  Vec3 position = Vec3::Zero();
  double path_deviation = 0.0;  // m, from the polyline
  double target_error = 0.0;    // m, from the step target
  double axial_frequency = 0.0;
  Vec3 frequencies = Vec3::Zero();  // labelled x, y, z
  double max_abs_q = 0.0;
  double rf_field = 0.0;
  double rf_null_residual = 0.0;  // transverse to the trap axis, V/m
  std::optional<double> depth;  // J
  double path_parameter = 0.0;  // arc length of the nearest path point, m
  /// Threshold breaches on a confining step (frequency band, RF field).
  std::vector<std::string> violations;
};

struct WaveformReport {
  std::vector<StepReport> steps;
  bool all_confining = false;
  /// Confining, no violations, and wells monotone along the path.
  bool all_pass = false;
  bool monotone = false;
  double max_path_deviation = 0.0;
  double max_target_error = 0.0;
  /// max |omega_z / target - 1| (or (max - min) / mean without a target).
  double frequency_ripple = 0.0;
  double max_abs_q = 0.0;
  double max_rf_field = 0.0;
  std::optional<double> min_depth;
};

struct VerifyOptions {
  std::optional<double> target_axial_frequency;
  double frequency_band = 0.05;
  /// Limit on the transverse RF field; unset skips the check (waveforms
  /// not built on the null).
  std::optional<double> rf_field_limit;  // V/m
  bool compute_depth = false;
  /// A minimum farther than this from the step target counts as lost.
  double capture_radius = 10e-6;
};

/// Re-characterizes every step independently; never throws for a bad step.
WaveformReport verify_waveform(const TrapConfiguration& rf_config, const TransportWaveform& waveform,
                               const VerifyOptions& options = {});

/// CSV: step,t_seconds,V_<name>...,x,y,z,omega_z_Hz (well positions in m).
void write_waveform_csv(const TransportWaveform& waveform, std::ostream& out);
/// Inverse of write_waveform_csv; targets are set to the well positions.
/// Throws ParseError on malformed input.
TransportWaveform read_waveform_csv(std::istream& in);

}  // namespace iontrap
