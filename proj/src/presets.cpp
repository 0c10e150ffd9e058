#include "iontrap/presets.hpp"

#include "iontrap/errors.hpp"

namespace iontrap::presets {

Vec2 surface_radial_targets() { return {hz_to_rad(7.80e6), hz_to_rad(9.25e6)}; }

std::map<std::string, double> surface_static_voltages() {
  return {{"E1", 0.71}, {"E2", -0.58}, {"E3", 0.20}, {"E4", 0.20}, {"E5", -1.81}, {"E6", 0.71}, {"E_CTR", 0.11}};
}

std::map<std::string, double> two_layer_static_voltages() {
  return {{"C1", 3.0}, {"C1p", 3.0}, {"C2", 0.0}, {"C2p", 0.0}, {"C3", 3.0}, {"C3p", 3.0}};
}

OperatingPoint paper_surface(Backend backend, const BemOptions& bem) {
  const SurfaceTrapParams params = fit_surface_widths({}, surface_ion_height);
  auto layout = std::make_shared<const ElectrodeLayout>(builtin_surface_trap(params));
  const double zone = params.load_to_experiment_distance;
  const Vec3 seed(zone, 0.0, surface_ion_height);
  // Amplitude inference always runs on the analytic basis: the published
  // radial frequencies calibrate the drive, not the solver.
  const auto analytic = std::make_shared<const PotentialBasis>(build_analytic_basis(*layout));
  const TrapConfiguration probe(analytic, mg24_ion(), 50.0, hz_to_rad(rf_frequency_hz), surface_static_voltages());
  const RfInference rf = infer_rf_amplitude(probe, surface_radial_targets(), seed);
  auto basis = backend == Backend::AnalyticPlane ? analytic
                                                 : std::make_shared<const PotentialBasis>(build_basis(*layout, backend, bem));
  TrapConfiguration config(basis, mg24_ion(), rf.amplitude, hz_to_rad(rf_frequency_hz), surface_static_voltages());
  return {"paper-surface", std::move(layout), std::move(config), rf.minimum};
}

OperatingPoint paper_two_layer(const BemOptions& bem) {
  BemOptions fit = bem;
  fit.panel_budget = std::min<std::size_t>(bem.panel_budget, 600);
  const TwoLayerTrapParams params = fit_two_layer_slot({}, two_layer_ion_distance, fit);
  auto layout = std::make_shared<const ElectrodeLayout>(builtin_two_layer_trap(params));
  auto basis = std::make_shared<const PotentialBasis>(build_bem_basis(*layout, bem));
  const Vec3 seed = find_rf_null(*basis, {0.0, 0.0, 0.5 * params.plane_separation});
  TrapConfiguration config(basis, mg24_ion(), 125.0, hz_to_rad(rf_frequency_hz), two_layer_static_voltages());
  return {"paper-twolayer", std::move(layout), std::move(config), seed};
}

OperatingPoint by_name(std::string_view name, std::optional<Backend> backend, const BemOptions& bem) {
  if (name == "paper-surface") return paper_surface(backend.value_or(Backend::AnalyticPlane), bem);
  if (name == "paper-twolayer") {
    if (backend.value_or(Backend::Bem) != Backend::Bem)
      throw ValidationError("paper-twolayer", "two-plane layouts need the bem backend");
    return paper_two_layer(bem);
  }
  throw ValidationError(std::string(name), "unknown preset (known: paper-surface, paper-twolayer)");
}

}  // namespace iontrap::presets
