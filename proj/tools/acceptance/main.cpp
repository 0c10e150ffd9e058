// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 when
// any criterion fails.

#include "cli.hpp"

#include "iontrap/bem.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/floquet.hpp"
#include "iontrap/heating.hpp"
#include "iontrap/presets.hpp"
#include "iontrap/voltsolve.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

using namespace iontrap;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const double kAxial = hz_to_rad(1.125e6);
const double kOmegaRf = hz_to_rad(presets::rf_frequency_hz);

const CharacterizeOptions kNoDepth = [] {
  CharacterizeOptions o;
  o.compute_depth = false;
  return o;
}();

const presets::OperatingPoint& surface() {
  static const auto op = presets::paper_surface();
  return op;
}

Polygon rect(double x0, double y0, double x1, double y1) { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }

double relative(double value, double reference) { return std::abs(value / reference - 1.0); }

// ---------------------------------------------------------------------------

Outcome heating_conversion() {
  std::ostringstream out, err;
  const int code = cli::run({"convert", "--se", "1e-10", "--freq-hz", "1.125e6", "--ion", "Mg24", "--json"}, out, err);
  if (code != 0) return {false, "convert exited " + std::to_string(code) + ": " + err.str()};
  const double n = nlohmann::json::parse(out.str()).at("quanta_per_s").get<double>();
  return {relative(n, 2.16e4) <= 0.01, fmt::format("{:.6g} quanta/s (2.16e4 +- 1%)", n)};
}

Outcome secular_frequencies() {
  const auto& op = surface();
  const auto r = characterize(op.config, op.seed, kNoDepth);
  const Vec3 f = r.modes.labeled_frequencies() / hz_to_rad(1e6);
  const bool axial = relative(f.z(), 1.125) <= 0.04;
  const bool radial = relative(f.x(), 7.80) <= 0.20 && relative(f.y(), 9.25) <= 0.20;
  const bool ordered = f.x() < f.y();
  return {axial && radial && ordered,
          fmt::format("omega/2pi x {:.3f} y {:.3f} z {:.4f} MHz (z {:+.2f}%, x {:+.1f}%, y {:+.1f}%)", f.x(), f.y(),
                      f.z(), 100 * (f.z() / 1.125 - 1), 100 * (f.x() / 7.80 - 1), 100 * (f.y() / 9.25 - 1))};
}

Outcome trap_depth_check() {
  // Oracle: U = a (z^2 - b^2)^2 + k (x^2 + y^2) / 2 has its barrier a b^4 at z = 0.
  const double m = mg24_ion().mass, q = constants::elementary_charge;
  const double b = 20e-6, a = 0.01, k = m * std::pow(hz_to_rad(1e6), 2);
  SyntheticElectrode well{"DC", ElectrodeRole::DC, [=](const Vec3& p, int) {
                            FieldDerivs d;
                            d.value = (a * std::pow(p.z() * p.z() - b * b, 2) +
                                       0.5 * k * (p.x() * p.x() + p.y() * p.y())) / q;
                            d.gradient = Vec3(k * p.x(), k * p.y(), 4 * a * p.z() * (p.z() * p.z() - b * b)) / q;
                            d.hessian = Mat3::Zero();
                            d.hessian(0, 0) = d.hessian(1, 1) = k / q;
                            d.hessian(2, 2) = 4 * a * (3 * p.z() * p.z() - b * b) / q;
                            return d;
                          }};
  auto basis = std::make_shared<const PotentialBasis>(build_synthetic_basis({well}, Vec3::UnitZ(), 50e-6));
  const TrapConfiguration synthetic(basis, mg24_ion(), 0.0, kOmegaRf, {{"DC", 1.0}});
  const double oracle_error = relative(characterize(synthetic, {1e-6, -1e-6, 25e-6}).depth.depth, a * std::pow(b, 4));

  const auto& op = surface();
  const double depth_mev = 1e3 * joule_to_ev(characterize(op.config, op.seed).depth.depth);
  return {oracle_error <= 1e-6 && relative(depth_mev, 25.0) <= 0.40,
          fmt::format("surface depth {:.2f} meV ({:+.1f}% of 25 meV, bound 40%); double-well oracle rel. error {:.1e}",
                      depth_mev, 100 * (depth_mev / 25 - 1), oracle_error)};
}

// RF quadrupole (y^2 - z^2) / r0^2 at Mathieu q with a static axial well.
TrapConfiguration quadrupole_at(double q) {
  const double r0 = 100e-6, m = mg24_ion().mass, e = constants::elementary_charge, axial = 0.02 * kOmegaRf;
  Mat3 rf = Mat3::Zero();
  rf(1, 1) = 2.0 / (r0 * r0);
  rf(2, 2) = -2.0 / (r0 * r0);
  Mat3 ax = Mat3::Zero();
  ax(0, 0) = m * axial * axial / e;
  auto b = std::make_shared<const PotentialBasis>(
      build_synthetic_basis({quadratic_electrode("RF", ElectrodeRole::RF, 0, Vec3::Zero(), rf),
                             quadratic_electrode("AX", ElectrodeRole::DC, 0, Vec3::Zero(), ax)}));
  const double amplitude = q * m * kOmegaRf * kOmegaRf * r0 * r0 / (4 * e);
  return TrapConfiguration(b, mg24_ion(), amplitude, kOmegaRf, {{"AX", 1.0}});
}

Outcome pseudopotential_validity() {
  bool pass = true;
  std::string detail;
  for (double q : {0.05, 0.1, 0.2, 0.35}) {
    const auto c = quadrupole_at(q);
    const auto modes = secular_modes(c, Vec3::Zero());
    const Vec3 floquet = verify_floquet(c, Vec3::Zero(), modes);
    double worst = 0;
    for (int k = 0; k < 3; ++k) worst = std::max(worst, relative(floquet[k], modes.frequencies[k]));
    pass = pass && worst <= q * q / 2 + 0.005;
    detail += fmt::format("{}q={} dev {:.2e} (bound {:.4f})", detail.empty() ? "" : "; ", q, worst, q * q / 2 + 0.005);
  }
  return {pass, detail};
}

Outcome backend_cross_validation() {
  // One driven rectangle in a large grounded plane, 2 um gaps.
  const double w = 100e-6, g = 2e-6, b = 1e-3, a = w / 2 + g;
  std::vector<Electrode> els{{"E", {rect(-w / 2, -w / 2, w / 2, w / 2)}, 0.0, ElectrodeRole::RF},
                             {"GL", {rect(-b, -b, -a, b)}, 0.0, ElectrodeRole::DC},
                             {"GR", {rect(a, -b, b, b)}, 0.0, ElectrodeRole::DC},
                             {"GB", {rect(-a, -b, a, -a)}, 0.0, ElectrodeRole::DC},
                             {"GT", {rect(-a, a, a, b)}, 0.0, ElectrodeRole::DC}};
  const ElectrodeLayout layout(std::move(els), {0.0}, {{"gap_m", g}, {"bem_focus", {0.0, 0.0, 100e-6}}});
  const auto analytic = build_analytic_basis(layout);
  const auto coarse = build_bem_basis(layout, BemOptions{2000});
  const auto fine = build_bem_basis(layout, BemOptions{4000});

  // The driven electrode is the problem both backends share: outside the
  // layout the plane model is grounded, the BEM one is empty space.
  double worst_phi = 0, worst_grad = 0;
  for (double h : {2 * g, 4 * g, 25e-6, 50e-6, 100e-6})
    for (double x : {0.0, 30e-6, 45e-6, 49e-6, 51e-6, 55e-6, 60e-6}) {
      const Vec3 p(x, 0.2 * x, h);
      worst_phi = std::max(worst_phi, std::abs(fine.potential("E", p) - analytic.potential("E", p)));
      const Vec3 ga = analytic.gradient("E", p);
      worst_grad = std::max(worst_grad, (fine.gradient("E", p) - ga).norm() / ga.norm());
    }
  const Vec3 centre(0, 0, w / 2);
  const double doubling = relative(fine.potential("E", centre), coarse.potential("E", centre));
  return {worst_phi <= 1e-3 && worst_grad <= 0.01 && doubling <= 1e-3,
          fmt::format("max |dphi| {:.2e}, max grad error {:.2f}%, panel doubling shifts centre phi {:.3f}%", worst_phi,
                      100 * worst_grad, 100 * doubling)};
}

// Mirror partner of every electrode under y -> -y, from the polygons.
std::map<std::string, std::string> mirror_pairs(const ElectrodeLayout& layout) {
  auto signature = [](const Electrode& e, double sy) {
    std::vector<std::pair<long long, long long>> v;
    for (const auto& poly : e.polygons)
      for (const auto& p : poly) v.emplace_back(std::llround(p.x() * 1e10), std::llround(sy * p.y() * 1e10));
    std::sort(v.begin(), v.end());
    return v;
  };
  std::map<std::string, std::string> pairs;
  for (const auto& e : layout.electrodes())
    for (const auto& f : layout.electrodes())
      if (signature(e, -1.0) == signature(f, 1.0)) pairs[e.name] = f.name;
  return pairs;
}

Outcome inverse_round_trip() {
  const auto& cfg = surface().config;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  const int cases = 50;
  int passed = 0;
  double worst_pos = 0, worst_freq = 0;
  for (int trial = 0; trial < cases; ++trial) {
    auto volts = presets::surface_static_voltages();
    for (auto& [name, value] : volts) value *= 1.0 + u(rng);
    try {
      const auto forward = characterize(cfg.with_static_voltages(volts), surface().seed, kNoDepth);
      WellConstraint c;
      c.target_position = forward.minimum.position;
      c.axial_frequency = forward.modes.labeled_frequencies().z();
      c.axes = forward.modes.labeled_axes();
      const auto s = solve_static(cfg, c);
      const auto back = characterize(cfg.with_static_voltages(s.voltages), surface().seed, kNoDepth);
      const double dp = (back.minimum.position - forward.minimum.position).norm();
      const double df = relative(back.modes.labeled_frequencies().z(), *c.axial_frequency);
      worst_pos = std::max(worst_pos, dp);
      worst_freq = std::max(worst_freq, df);
      if (dp <= 0.1e-6 && df <= 0.005) ++passed;
    } catch (const Error& e) {
      std::cerr << "  round trip case " << trial << ": " << e.what() << '\n';
    }
  }

  const auto pairs = mirror_pairs(*surface().layout);
  double asymmetry = 0;
  for (const char* zone : {"load", "e-zone"}) {
    const Vec2 xy = *surface().layout->zone(zone);
    WellConstraint c;
    c.target_position = find_rf_null(cfg.basis(), {xy.x(), xy.y(), presets::surface_ion_height});
    c.axial_frequency = kAxial;
    c.require_rf_null = true;
    const auto s = solve_static(cfg, c);
    for (const auto& [name, partner] : pairs) {
      const auto a = s.voltages.find(name), b = s.voltages.find(partner);
      const double va = a == s.voltages.end() ? 0.0 : a->second, vb = b == s.voltages.end() ? 0.0 : b->second;
      asymmetry = std::max(asymmetry, std::abs(va - vb));
    }
  }
  return {passed == cases && asymmetry <= 1e-9 && pairs.size() == surface().layout->size(),
          fmt::format("{}/{} cases, worst position {:.2e} um, worst omega_z {:.2e}; mirror asymmetry {:.1e} V over {} "
                      "electrodes",
                      passed, cases, 1e6 * worst_pos, worst_freq, asymmetry, pairs.size())};
}

Outcome transport() {
  const auto& op = surface();
  const auto& basis = op.config.basis();
  const Vec2 from = *op.layout->zone("load"), to = *op.layout->zone("e-zone");
  const std::vector<Vec3> path{find_rf_null(basis, {from.x(), from.y(), presets::surface_ion_height}),
                               find_rf_null(basis, {to.x(), to.y(), presets::surface_ion_height})};
  WellConstraint c;
  c.axial_frequency = kAxial;
  c.require_rf_null = true;
  const auto w = design_waveform(op.config, path, 64, c);
  const auto r = verify_waveform(op.config, w, {.target_axial_frequency = kAxial, .rf_field_limit = 10.0});
  const bool pass = r.steps.size() == 64 && r.all_confining && r.max_path_deviation <= 1e-6 &&
                    r.frequency_ripple <= 0.05 && r.max_abs_q < 0.9;
  return {pass, fmt::format("{} steps over {:.1f} um, all confining {}, max path deviation {:.2e} um, omega_z ripple "
                            "{:.2e}%, max |q| {:.3f}",
                            r.steps.size(), 1e6 * (path[1] - path[0]).norm(), r.all_confining ? "yes" : "no",
                            1e6 * r.max_path_deviation, 100 * r.frequency_ripple, r.max_abs_q)};
}

LaserParams example_laser() {
  std::ifstream f(IONTRAP_DATA_DIR "/mg24_d2_laser.json");
  if (!f) throw ParseError("missing " IONTRAP_DATA_DIR "/mg24_d2_laser.json");
  return laser_from_json(nlohmann::json::parse(f));
}

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Copy of `laser` whose detection efficiency gives `photons` expected counts.
LaserParams with_photons(LaserParams laser, double e0, double bin, int bins, double photons) {
  laser.detection_efficiency = 1.0;
  laser.detection_efficiency = photons / total(RecoolingModel(mg24_ion(), laser).expected_counts(e0, bin, bins));
  return laser;
}

Outcome recooling_chain() {
  const auto ion = mg24_ion();
  const auto laser = example_laser();
  const RecoolingModel model(ion, laser);

  // Noiseless identity over three decades of initial energy.
  double worst_identity = 0;
  for (auto [e0, bin] : {std::pair{1e-23, 2e-6}, {1e-22, 40e-6}, {1e-21, 2e-3}, {1e-20, 40e-3}}) {
    const auto fit = fit_recooling(recooling_curve(model, e0, kAxial, bin, 100), model);
    worst_identity = std::max(worst_identity, relative(fit.energy, e0));
  }

  // Monte Carlo bias, 200 Poisson replicas of 1e4 photons.
  const double e_mc = 5e-22, bin_mc = 200e-6;
  const RecoolingModel mc_model(ion, with_photons(laser, e_mc, bin_mc, 100, 1e4));
  const auto expected = recooling_curve(mc_model, e_mc, kAxial, bin_mc, 100);
  double sum = 0;
  const int replicas = 200;
  for (int r = 0; r < replicas; ++r)
    sum += fit_recooling(poisson_sample(expected, 1000 + static_cast<std::uint64_t>(r)), mc_model).energy;
  const double bias = sum / replicas / e_mc - 1.0;

  // End to end: S_E -> heating -> recooling curves -> fits -> S_E.
  const double s_e = 1e-10, bin = 400e-6;
  const double slope = constants::hbar * kAxial * quanta_rate_from_field_noise({s_e, kAxial}, ion);
  const double e_start = model.steady_state_energy();
  std::vector<DelayPoint> series;
  std::uint64_t seed = 7;
  for (double delay : {5.0, 10.0, 20.0, 30.0, 40.0}) {
    const double e0 = e_start + slope * delay;
    const RecoolingModel m(ion, with_photons(laser, e0, bin, 100, 1e5));
    const auto fit = fit_recooling(poisson_sample(recooling_curve(m, e0, kAxial, bin, 100), seed++), m);
    series.push_back({delay, fit.energy, fit.energy_sigma});
  }
  const double recovered = heating_rate_from_delays(series, ion, kAxial).field_psd;

  return {worst_identity <= 0.005 && std::abs(bias) <= 0.05 && relative(recovered, s_e) <= 0.10,
          fmt::format("identity worst {:.2e}, MC bias {:+.2e}, S_E recovered {:.4g} ({:+.2f}%)", worst_identity, bias,
                      recovered, 100 * (recovered / s_e - 1))};
}

Outcome field_properties() {
  const auto layout = builtin_surface_trap();
  const auto basis = build_analytic_basis(layout);
  std::mt19937_64 rng(17);

  // Harmonicity and gradient consistency at least two gaps above the plane.
  double worst_trace = 0, worst_fd = 0;
  std::uniform_real_distribution<double> ux(-500e-6, 500e-6), uy(-200e-6, 200e-6), uz(2 * layout.gap(), 300e-6);
  for (int k = 0; k < 30; ++k) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    const double h = 1e-3 * p.z();
    for (std::size_t i = 0; i < basis.size(); ++i) {
      const auto d = basis.derivs(i, p);
      worst_trace = std::max(worst_trace, std::abs(d.hessian.trace()) / d.hessian.norm());
      Vec3 fd;
      for (int axis = 0; axis < 3; ++axis) {
        const Vec3 e = h * Vec3::Unit(axis);
        auto phi = [&](const Vec3& q) { return basis.derivs(i, q, kValue).value; };
        fd[axis] = (-phi(p + 2 * e) + 8 * phi(p + e) - 8 * phi(p - e) + phi(p - 2 * e)) / (12 * h);
      }
      worst_fd = std::max(worst_fd, (d.gradient - fd).norm() / d.gradient.norm());
    }
  }

  // Completeness on a fully tiled plane.
  std::vector<Electrode> tiles;
  const int n = 5;
  const double pitch = 100e-6, gap = 4e-6, half = n * pitch / 2;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      // Outer tiles reach the bounding box, which open_boundary extends to infinity.
      auto lo = [&](int k) { return -half + k * pitch + (k == 0 ? 0.0 : gap / 2); };
      auto hi = [&](int k) { return -half + (k + 1) * pitch - (k == n - 1 ? 0.0 : gap / 2); };
      tiles.push_back({fmt::format("T{}{}", i, j), {rect(lo(i), lo(j), hi(i), hi(j))}, 0.0,
                       i == n / 2 && j == n / 2 ? ElectrodeRole::RF : ElectrodeRole::DC});
    }
  const auto tiled =
      build_analytic_basis(ElectrodeLayout(std::move(tiles), {0.0}, {{"gap_m", gap}, {"open_boundary", true}}));
  double worst_sum = 0;
  std::uniform_real_distribution<double> txy(-half, half), tz(1e-6, half / 2);
  for (int k = 0; k < 200; ++k) {
    double sum = 0;
    for (const auto& d : tiled.all({txy(rng), txy(rng), tz(rng)}, kValue)) sum += d.value;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }

  // Maximum principle on 1e4 points, log-uniform in height.
  int violations = 0;
  std::uniform_real_distribution<double> mx(-1.5e-3, 1.5e-3), my(-400e-6, 400e-6), lz(std::log(1e-7), std::log(1e-3));
  for (int k = 0; k < 10000; ++k)
    for (const auto& d : basis.all({mx(rng), my(rng), std::exp(lz(rng))}, kValue))
      if (d.value < -1e-12 || d.value > 1.0 + 1e-12) ++violations;

  return {worst_trace <= 1e-6 && worst_fd <= 1e-6 && worst_sum <= 1e-3 && violations == 0,
          fmt::format("trace/|H| {:.1e}, gradient vs FD {:.1e}, |sum phi - 1| {:.1e}, max-principle violations {}",
                      worst_trace, worst_fd, worst_sum, violations)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> check;
  double time_limit;  // s, 0 for none
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "heating conversion", heating_conversion, 1.0},
      {2, "secular frequency reconstruction", secular_frequencies, 30.0},
      {3, "trap depth", trap_depth_check, 0.0},
      {4, "pseudopotential validity", pseudopotential_validity, 60.0},
      {5, "backend cross-validation", backend_cross_validation, 0.0},
      {6, "inverse solver round trip", inverse_round_trip, 0.0},
      {7, "transport", transport, 300.0},
      {8, "recooling chain", recooling_chain, 0.0},
      {9, "field-solver property suite", field_properties, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.time_limit <= 0 || seconds < c.time_limit;
    if (!in_time) o.detail += fmt::format("; over the {:.0f} s limit", c.time_limit);
    const bool pass = o.pass && in_time;
    failures += !pass;
    fmt::print("criterion {} {}: {} | {} | {:.2f} s\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail, seconds);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
