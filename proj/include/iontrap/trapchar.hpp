#pragma once

// Pseudopotential trap characterization: effective potential, minimum,
// secular modes, Mathieu parameters, depth and micromotion.

#include "iontrap/basis.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace iontrap {

struct IonSpecies {
  std::string label;
  double mass = 0.0;    // kg
  double charge = 0.0;  // C

  /// Throws ValidationError unless mass > 0 and charge != 0.
  void validate() const;
};

IonSpecies mg24_ion();
/// Accepts "Mg24", "24Mg+" and "Mg24+".
IonSpecies ion_by_name(std::string_view name);

/// Ion plus drive. Static voltages are measured against `reference_voltage`,
/// the potential of RF electrodes (DC) and of everything outside the layout;
/// only differences to it enter the physics.
class TrapConfiguration {
 public:
  TrapConfiguration(std::shared_ptr<const PotentialBasis> basis, IonSpecies ion, double rf_amplitude,
                    double rf_frequency, std::map<std::string, double> static_voltages = {},
                    double reference_voltage = 0.0);

  const PotentialBasis& basis() const noexcept { return *basis_; }
  const std::shared_ptr<const PotentialBasis>& basis_ptr() const noexcept { return basis_; }
  const IonSpecies& ion() const noexcept { return ion_; }
  /// Zero-to-peak volts on every RF electrode, in phase.
  double rf_amplitude() const noexcept { return rf_amplitude_; }
  /// Omega_RF in rad/s.
  double rf_frequency() const noexcept { return rf_frequency_; }
  const std::map<std::string, double>& static_voltages() const noexcept { return static_voltages_; }
  double reference_voltage() const noexcept { return reference_voltage_; }

  TrapConfiguration with_rf_amplitude(double volts) const;
  TrapConfiguration with_static_voltages(std::map<std::string, double> voltages, double reference = 0.0) const;

  /// Basis weights: column 0 is the static voltage relative to the reference,
  /// column 1 selects the RF electrodes (unit amplitude).
  const Eigen::MatrixXd& weights() const noexcept { return weights_; }

  /// q^2 A^2 / (4 m Omega^2): multiplies |grad phi_RF|^2 to give joules.
  double ponderomotive_scale() const noexcept;

 private:
  std::shared_ptr<const PotentialBasis> basis_;
  IonSpecies ion_;
  double rf_amplitude_;
  double rf_frequency_;
  std::map<std::string, double> static_voltages_;
  double reference_voltage_;
  Eigen::MatrixXd weights_;
};

/// Basis fields at a point: static superposition (volts) and unit RF
/// potential phi_RF.
struct ConfigFields {
  FieldDerivs static_field;
  FieldDerivs rf_field;
};
ConfigFields config_fields(const TrapConfiguration& config, const Vec3& p, int order = kHessian);

/// Total effective potential energy in joules.
struct EnergyDerivs {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();
};

/// q * static potential + q^2 |grad Phi_RF|^2 / (4 m Omega^2). The
/// ponderomotive Hessian comes from Richardson differences of its analytic
/// gradient with step 1e-3 x (distance to the nearest electrode plane).
EnergyDerivs effective_potential(const TrapConfiguration& config, const Vec3& p, int order = kHessian);

/// Ponderomotive part alone, joules.
double ponderomotive_potential(const TrapConfiguration& config, const Vec3& p);

struct MinimumOptions {
  double force_tolerance = 1e-22;  // N
  /// Converged also requires the Newton step below this.
  double position_tolerance = 1e-11;  // m
  int max_iterations = 200;
};

struct MinimumResult {
  Vec3 position = Vec3::Zero();
  EnergyDerivs energy;
  int iterations = 0;
};

/// Newton with backtracking line search; downhill simplex when the Hessian
/// is indefinite. Throws NotConfiningError when no confining minimum is
/// reached.
MinimumResult find_minimum(const TrapConfiguration& config, const Vec3& seed, const MinimumOptions& options = {});

/// Secular modes at a minimum, ascending in frequency. Axes are unit columns
/// with their largest component positive.
struct SecularModes {
  Vec3 frequencies = Vec3::Zero();  // rad/s
  Mat3 axes = Mat3::Identity();
  /// Mode indices labelled x, y, z: z overlaps the trap axis most, x and y
  /// are the remaining modes in ascending frequency.
  std::array<int, 3> labels{0, 1, 2};

  Vec3 labeled_frequencies() const;  // (omega_x, omega_y, omega_z)
  Mat3 labeled_axes() const;
};

/// Throws NotConfiningError on a non-positive curvature.
SecularModes secular_modes(const TrapConfiguration& config, const Vec3& minimum);
SecularModes modes_from_hessian(const Mat3& hessian, double mass, const Vec3& trap_axis);

/// Per-mode stability parameters (mode order of SecularModes).
struct MathieuParameters {
  Vec3 q = Vec3::Zero();
  Vec3 a = Vec3::Zero();
  /// All |q| <= 0.9: inside the regime where the pseudopotential holds.
  bool adiabatic = true;
};
MathieuParameters mathieu_parameters(const TrapConfiguration& config, const Vec3& minimum, const SecularModes& modes);

struct Micromotion {
  double rf_field = 0.0;   // V/m, amplitude
  double amplitude = 0.0;  // m
};
Micromotion micromotion(const TrapConfiguration& config, const Vec3& point);

struct DepthOptions {
  int directions = 160;
  int samples = 48;
  /// Ray length; 0 picks 8 x the basis length scale.
  double max_radius = 0.0;
  /// Rays stop this fraction of the minimum's plane distance above a plane.
  double clearance = 0.15;
  double saddle_force_tolerance = 1e-21;  // N
  int saddle_iterations = 100;
};

struct DepthResult {
  double depth = 0.0;  // J
  Vec3 saddle = Vec3::Zero();
  Vec3 escape_direction = Vec3::Zero();
};

/// Lowest escape barrier. Rays from the minimum sweep shells that are
/// equipotential in the harmonic approximation; the minimax ray seeds an
/// eigenvector-following refinement to a first-order saddle. Throws
/// NumericalError when no barrier lies inside the field region.
DepthResult trap_depth(const TrapConfiguration& config, const MinimumResult& minimum, const SecularModes& modes,
                       const DepthOptions& options = {});

struct TrapCharacterization {
  MinimumResult minimum;
  SecularModes modes;
  MathieuParameters mathieu;
  DepthResult depth;
  Micromotion micromotion;
};

struct CharacterizeOptions {
  MinimumOptions minimum;
  DepthOptions depth;
  bool compute_depth = true;
};

TrapCharacterization characterize(const TrapConfiguration& config, const Vec3& seed,
                                  const CharacterizeOptions& options = {});

/// SI fields plus MHz/meV/um conveniences.
nlohmann::json to_json(const TrapCharacterization& report, const TrapConfiguration& config);

struct RfInference {
  double amplitude = 0.0;
  /// RMS relative mismatch of the two radial frequencies.
  double residual = 0.0;
  Vec3 minimum = Vec3::Zero();
  SecularModes modes;
};

/// Amplitude in [1, 500] V whose radial (x, y) frequencies best match the
/// targets in least squares. Throws InfeasibleError when the best residual
/// exceeds `max_residual`.
RfInference infer_rf_amplitude(const TrapConfiguration& config, const Vec2& target_radial, const Vec3& seed,
                               double max_residual = 0.25);

/// Point where grad phi_RF vanishes, nearest the seed (Gauss-Newton with a
/// pseudo-inverse). Directions with RF curvature below 1e-3 of the largest
/// count as flat, so on a null line the seed moves only transversely; the
/// weak axial field of finite rails is left in place.
Vec3 find_rf_null(const PotentialBasis& basis, const Vec3& seed);

/// Uniform scale of rail and centre widths putting the RF null of the
/// builtin surface trap at `target_height` above the plane.
SurfaceTrapParams fit_surface_widths(SurfaceTrapParams params, double target_height);

/// Slot width of the builtin two-layer trap giving the requested distance
/// from the RF null to the nearest electrode edge (BEM backend).
TwoLayerTrapParams fit_two_layer_slot(TwoLayerTrapParams params, double target_distance,
                                      const BemOptions& options = {});

}  // namespace iontrap
