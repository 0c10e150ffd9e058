#pragma once

// Reconstructed operating points of the two published devices.

#include "iontrap/trapchar.hpp"

namespace iontrap::presets {

/// Measured radial frequencies of the surface trap, rad/s.
Vec2 surface_radial_targets();
/// Ion height above the surface trap, m.
inline constexpr double surface_ion_height = 41e-6;
/// Ion to nearest-electrode distance in the two-layer trap, m.
inline constexpr double two_layer_ion_distance = 122e-6;
inline constexpr double rf_frequency_hz = 67e6;

std::map<std::string, double> surface_static_voltages();
std::map<std::string, double> two_layer_static_voltages();

struct OperatingPoint {
  std::string name;
  std::shared_ptr<const ElectrodeLayout> layout;
  TrapConfiguration config;
  Vec3 seed;  // well-minimum start point
};

/// Surface trap with rail and centre widths fitted to a 41 um RF null, the
/// published static voltages, and the RF amplitude inferred from the measured
/// radial frequencies (seed at the experiment zone).
OperatingPoint paper_surface(Backend backend = Backend::AnalyticPlane, const BemOptions& bem = {});

/// Two-layer trap with the slot fitted to the 122 um ion distance, 125 V RF
/// and the 3 V / 0 V static pattern (BEM backend).
OperatingPoint paper_two_layer(const BemOptions& bem = {});

/// "paper-surface" or "paper-twolayer"; throws ValidationError otherwise.
/// Without a backend each preset uses its own (analytic, BEM).
OperatingPoint by_name(std::string_view name, std::optional<Backend> backend = std::nullopt,
                       const BemOptions& bem = {});

}  // namespace iontrap::presets
