#include "cli.hpp"

#include "plot.hpp"

#include "iontrap/errors.hpp"
#include "iontrap/heating.hpp"
#include "iontrap/presets.hpp"
#include "iontrap/voltsolve.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#ifndef IONTRAP_DATA_DIR
#define IONTRAP_DATA_DIR "data"
#endif

namespace iontrap::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class IoError : public Error {
 public:
  using Error::Error;
};

struct GlobalOptions {
  std::string preset;
  std::string geometry;
  std::string backend;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::string ion = "Mg24";
  std::string voltages;
  std::optional<double> rf_amplitude;
  double rf_frequency_mhz = presets::rf_frequency_hz / 1e6;
  std::size_t panel_budget = BemOptions{}.panel_budget;
};

struct Context {
  std::shared_ptr<const ElectrodeLayout> layout;
  TrapConfiguration config;
  Vec3 seed;
  std::string source;
};

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 parse_triple(const std::string& text, double scale) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used) * scale);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("position", "'" + text + "' is not x,y,z");
    }
  }
  if (v.size() != 3) throw ValidationError("position", "'" + text + "' is not x,y,z");
  return {v[0], v[1], v[2]};
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.precision(17);
  return out;
}

fs::path output_dir(const GlobalOptions& g) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (ec || !fs::is_directory(g.out_dir)) throw IoError("cannot create output directory '" + g.out_dir + "'");
  return g.out_dir;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

Backend parse_backend(const std::string& name) {
  if (name == "analytic") return Backend::AnalyticPlane;
  if (name == "bem") return Backend::Bem;
  throw ValidationError("--backend", "expected analytic or bem, got '" + name + "'");
}

// Voltage files are either {name: volts} or the document written by solve.
struct VoltageFile {
  std::map<std::string, double> voltages;
  double reference = 0.0;
  std::optional<Vec3> well;
};

VoltageFile read_voltages(const std::string& path) {
  const json j = read_json_file(path);
  VoltageFile v;
  try {
    if (j.contains("voltages_V")) {
      v.voltages = j.at("voltages_V").get<std::map<std::string, double>>();
      v.reference = j.value("reference_voltage_V", 0.0);
      if (j.contains("well_position_m")) {
        const auto p = j.at("well_position_m").get<std::vector<double>>();
        if (p.size() != 3) throw ParseError("well_position_m needs 3 entries");
        v.well = Vec3(p[0], p[1], p[2]);
      }
    } else {
      v.voltages = j.get<std::map<std::string, double>>();
    }
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
  return v;
}

// Height of the nominal trap point above a zone: the mid-plane between two
// planes, else one length scale above the single plane.
double nominal_height(const ElectrodeLayout& layout, const PotentialBasis& basis) {
  const auto& planes = layout.planes();
  if (planes.size() > 1) return 0.5 * (planes[0] + planes[1]);
  return planes.front() + basis.length_scale();
}

struct Position {
  Vec3 point;
  bool zone = false;
};

// A zone name (projected onto the RF null above it) or x,y,z in metres.
Position resolve_position(const Context& ctx, const std::string& text) {
  if (text.find(',') != std::string::npos) return {parse_triple(text, 1.0), false};
  const auto zone = ctx.layout->zone(text);
  if (!zone) throw ValidationError("position", "unknown zone '" + text + "'");
  const auto& basis = ctx.config.basis();
  const Vec3 start(zone->x(), zone->y(), nominal_height(*ctx.layout, basis));
  return {find_rf_null(basis, start), true};
}

Context make_context(const GlobalOptions& g) {
  if (g.preset.empty() == g.geometry.empty()) throw ValidationError("", "give exactly one of --preset or --geometry");
  const std::optional<Backend> backend = g.backend.empty() ? std::nullopt : std::optional(parse_backend(g.backend));
  const BemOptions bem{g.panel_budget};
  std::optional<Context> ctx;
  if (!g.preset.empty()) {
    auto op = presets::by_name(g.preset, backend, bem);
    ctx.emplace(Context{op.layout, op.config, op.seed, g.preset});
  } else {
    if (!fs::exists(g.geometry)) throw IoError("geometry file '" + g.geometry + "' does not exist");
    auto layout = std::make_shared<const ElectrodeLayout>(load_layout_file(g.geometry));
    const Backend b = backend.value_or(layout->planes().size() > 1 ? Backend::Bem : Backend::AnalyticPlane);
    auto basis = std::make_shared<const PotentialBasis>(build_basis(*layout, b, bem));
    TrapConfiguration config(basis, ion_by_name(g.ion), g.rf_amplitude.value_or(0.0),
                             hz_to_rad(1e6 * g.rf_frequency_mhz));
    const auto zones = layout->metadata().value("zones", json::object());
    const Vec2 xy = zones.empty() ? Vec2::Zero() : Vec2(zones.begin()->at(0).get<double>(), zones.begin()->at(1).get<double>());
    Vec3 seed(xy.x(), xy.y(), nominal_height(*layout, *basis));
    if (config.rf_amplitude() != 0.0) seed = find_rf_null(*basis, seed);
    ctx.emplace(Context{layout, config, seed, g.geometry});
  }
  if (!g.preset.empty() && g.rf_amplitude) ctx->config = ctx->config.with_rf_amplitude(*g.rf_amplitude);
  if (!g.voltages.empty()) {
    const auto v = read_voltages(g.voltages);
    ctx->config = ctx->config.with_static_voltages(v.voltages, v.reference);
    if (v.well) ctx->seed = *v.well;
  }
  return std::move(*ctx);
}

double frequency_hz(std::optional<double> hz, std::optional<double> mhz, std::optional<double> fallback,
                    const char* what) {
  if (hz) return *hz;
  if (mhz) return 1e6 * *mhz;
  if (fallback) return *fallback;
  throw ValidationError(what, "frequency required");
}

// "2.16e4": mantissa with `digits` significant figures, bare exponent.
std::string compact_sci(double x, int digits) {
  if (x == 0.0) return "0";
  auto s = fmt::format("{:.{}e}", x, digits - 1);
  const auto e = s.find('e');
  const int exponent = std::stoi(s.substr(e + 1));
  return s.substr(0, e) + "e" + std::to_string(exponent);
}

// ---------------------------------------------------------------------------
// characterize

struct CharacterizeArgs {
  std::string pos;
  std::string pos_um;
  bool no_depth = false;
  int grid = 256;
  std::string plane = "xz";  // horizontal axis of the contour plot: x or y
};

void write_line_cuts(const TrapConfiguration& config, const TrapCharacterization& r, const fs::path& dir) {
  const Vec3 p0 = r.minimum.position;
  const double d = config.basis().boundary_distance(p0);
  const double half = 0.8 * std::min(d, 4.0 * config.basis().length_scale());
  const Mat3 axes = r.modes.labeled_axes();
  const int n = 201;
  const char* names[3] = {"x", "y", "z"};
  for (int k = 0; k < 3; ++k) {
    auto out = open_output(dir / fmt::format("linecut_{}.csv", names[k]));
    out << "s_m,x_m,y_m,z_m,energy_eV,static_eV,pseudo_eV\n";
    for (int i = 0; i < n; ++i) {
      const double s = -half + 2.0 * half * i / (n - 1);
      const Vec3 p = p0 + s * axes.col(k);
      try {
        const double total = effective_potential(config, p, kValue).value;
        const double pseudo = ponderomotive_potential(config, p);
        fmt::print(out, "{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s, p.x(), p.y(), p.z(),
                   joule_to_ev(total), joule_to_ev(total - pseudo), joule_to_ev(pseudo));
      } catch (const EvaluationError&) {
        // outside the field region: the cut just has a hole
      }
    }
  }
}

void write_contour(const TrapConfiguration& config, const TrapCharacterization& r, const ElectrodeLayout* layout,
                   int n, const std::string& plane, const fs::path& path) {
  const int h = plane == "yz" ? 1 : 0;
  const Vec3 p0 = r.minimum.position;
  const double d = std::min(config.basis().boundary_distance(p0), 4.0 * config.basis().length_scale());
  double z_lo = p0.z() - 1.5 * d, z_hi = p0.z() + 1.5 * d;
  std::vector<double> planes;
  if (layout) planes = layout->planes();
  for (double z : planes) {
    if (z < p0.z()) z_lo = std::max(z_lo, z + 0.05 * d);
    if (z > p0.z()) z_hi = std::min(z_hi, z - 0.05 * d);
  }
  const double half_x = std::max(1.5 * d, 0.5 * (z_hi - z_lo));
  plot::Grid g{n, n, 1e6 * (p0[h] - half_x), 1e6 * (p0[h] + half_x), 1e6 * z_lo, 1e6 * z_hi, {}};
  g.values.resize(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      Vec3 p = p0;
      p[h] = 1e-6 * g.x(i);
      p.z() = 1e-6 * g.y(j);
      double v = std::numeric_limits<double>::quiet_NaN();
      try {
        v = 1e3 * joule_to_ev(ponderomotive_potential(config, p));
      } catch (const EvaluationError&) {
      }
      g.values[static_cast<std::size_t>(j) * n + i] = v;
    }
  std::vector<double> finite;
  for (double v : g.values)
    if (std::isfinite(v)) finite.push_back(v);
  if (finite.empty()) throw NumericalError("contour plot: no point of the x-z window lies in the field region");
  std::sort(finite.begin(), finite.end());
  const double lo = finite.front(), hi = finite[finite.size() / 2];
  std::vector<double> levels;
  for (int k = 1; k <= 12; ++k) levels.push_back(lo + (hi - lo) * k / 13.0);
  for (double& z : planes) z *= 1e6;
  auto out = open_output(path);
  const char axis = h == 0 ? 'x' : 'y';
  plot::write_contour_svg(out, g, levels, fmt::format("pseudopotential (meV), {}-z plane through the minimum", axis),
                          fmt::format("{} (um)", axis), "z (um)", {{1e6 * p0[h], 1e6 * p0.z()}}, planes);
}

int cmd_characterize(const GlobalOptions& g, const CharacterizeArgs& a, std::ostream& out) {
  auto ctx = make_context(g);
  if (!a.pos_um.empty()) ctx.seed = parse_triple(a.pos_um, 1e-6);
  else if (!a.pos.empty()) ctx.seed = resolve_position(ctx, a.pos).point;
  const auto dir = output_dir(g);

  CharacterizeOptions options;
  options.compute_depth = !a.no_depth;
  const auto r = characterize(ctx.config, ctx.seed, options);
  json j = to_json(r, ctx.config);
  j["source"] = ctx.source;
  {
    auto f = open_output(dir / "characterization.json");
    f << j.dump(2) << '\n';
  }
  {
    auto f = open_output(dir / "layout.json");
    f << serialize_layout(*ctx.layout) << '\n';
  }
  write_line_cuts(ctx.config, r, dir);
  write_contour(ctx.config, r, ctx.layout.get(), a.grid, a.plane, dir / fmt::format("pseudopotential_{}.svg", a.plane));

  const Vec3 f = r.modes.labeled_frequencies() / hz_to_rad(1e6);
  const Vec3 p = 1e6 * r.minimum.position;
  fmt::print(out, "minimum ({:.3f}, {:.3f}, {:.3f}) um\n", p.x(), p.y(), p.z());
  fmt::print(out, "secular frequencies x {:.4f} y {:.4f} z {:.4f} MHz\n", f.x(), f.y(), f.z());
  if (options.compute_depth) fmt::print(out, "depth {:.3f} meV\n", 1e3 * joule_to_ev(r.depth.depth));
  fmt::print(out, "max |q| {:.4f}\n", r.mathieu.q.cwiseAbs().maxCoeff());
  return kOk;
}

// ---------------------------------------------------------------------------
// solve

struct SolveArgs {
  std::string pos;
  std::optional<double> target_hz, target_mhz;
  bool rf_null = false;
  std::optional<double> lambda;
  double vmax = 10.0;
};

int cmd_solve(const GlobalOptions& g, const SolveArgs& a, std::ostream& out) {
  const auto ctx = make_context(g);
  const auto dir = output_dir(g);
  const Position pos = resolve_position(ctx, a.pos);
  WellConstraint c;
  c.target_position = pos.point;
  c.axial_frequency = hz_to_rad(frequency_hz(a.target_hz, a.target_mhz, std::nullopt, "--target-freq-hz"));
  c.require_rf_null = a.rf_null || pos.zone;
  c.default_bounds = {-a.vmax, a.vmax};
  SolveOptions options;
  options.lambda = a.lambda;
  const auto s = solve_static(ctx.config, c, options);

  json j;
  j["voltages_V"] = s.voltages;
  j["reference_voltage_V"] = 0.0;
  j["rf_amplitude_V"] = ctx.config.rf_amplitude();
  j["rf_frequency_Hz"] = rad_to_hz(ctx.config.rf_frequency());
  j["target_m"] = vec_json(s.target);
  j["well_position_m"] = vec_json(s.achieved_position);
  j["position_error_m"] = s.position_error;
  j["target_axial_frequency_Hz"] = rad_to_hz(*c.axial_frequency);
  j["axial_frequency_Hz"] = s.axial_frequency ? json(rad_to_hz(*s.axial_frequency)) : json(nullptr);
  j["secular_frequencies_Hz"] = vec_json(s.modes.labeled_frequencies() / two_pi);
  j["rf_field_V_per_m"] = s.rf_field;
  j["rf_null_residual_V_per_m"] = s.rf_null_residual;
  j["lambda"] = s.lambda;
  j["tikhonov_iterations"] = s.tikhonov_iterations;
  j["fixed_point_iterations"] = s.fixed_point_iterations;
  j["active_bounds"] = s.active_bounds;
  j["source"] = ctx.source;
  auto f = open_output(dir / "voltages.json");
  f << j.dump(2) << '\n';

  const Vec3 p = 1e6 * s.achieved_position;
  fmt::print(out, "well ({:.3f}, {:.3f}, {:.3f}) um, error {:.3g} um\n", p.x(), p.y(), p.z(), 1e6 * s.position_error);
  if (s.axial_frequency) fmt::print(out, "axial frequency {:.6f} MHz\n", rad_to_hz(*s.axial_frequency) / 1e6);
  fmt::print(out, "wrote {}\n", (dir / "voltages.json").string());
  return kOk;
}

// ---------------------------------------------------------------------------
// transport

struct TransportArgs {
  std::string from, to;
  int steps = 64;
  std::optional<double> target_hz, target_mhz;
  double step_us = 10.0;
  double slew = 2.0;
  double vmax = 10.0;
  bool no_rf_null = false;
};

void write_strip(const TransportWaveform& w, const WaveformReport& r, double target_hz, const fs::path& path) {
  plot::Panel position{"well arc length along the path (um)", {{"well", {}}}, {}};
  plot::Panel freq{"axial frequency (MHz), band +-5%", {{"omega_z / 2 pi", {}}},
                   {target_hz / 1e6, 0.95 * target_hz / 1e6, 1.05 * target_hz / 1e6}};
  plot::Panel deviation{"distance from the path (um)", {{"deviation", {}}}, {}};
  for (const auto& s : r.steps) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    position.series[0].values.push_back(s.confining ? 1e6 * s.path_parameter : nan);
    freq.series[0].values.push_back(s.confining ? rad_to_hz(s.axial_frequency) / 1e6 : nan);
    deviation.series[0].values.push_back(s.confining ? 1e6 * s.path_deviation : nan);
  }
  plot::Panel volts{"electrode voltages (V)", {}, {}};
  if (!w.steps.empty()) {
    for (const auto& [name, v0] : w.steps.front().voltages) {
      plot::Series series{name, {}};
      double peak = 0;
      for (const auto& s : w.steps) {
        const auto it = s.voltages.find(name);
        series.values.push_back(it == s.voltages.end() ? 0.0 : it->second);
        peak = std::max(peak, std::abs(series.values.back()));
      }
      if (peak > 1e-9) volts.series.push_back(std::move(series));
    }
  }
  auto out = open_output(path);
  plot::write_strip_svg(out, {position, freq, deviation, volts}, "step");
}

int cmd_transport(const GlobalOptions& g, const TransportArgs& a, std::ostream& out, std::ostream& err) {
  const auto ctx = make_context(g);
  const auto dir = output_dir(g);
  const double target_hz = frequency_hz(a.target_hz, a.target_mhz, 1.125e6, "--target-freq-hz");
  const std::vector<Vec3> path{resolve_position(ctx, a.from).point, resolve_position(ctx, a.to).point};
  WellConstraint c;
  c.axial_frequency = hz_to_rad(target_hz);
  c.require_rf_null = !a.no_rf_null;
  c.default_bounds = {-a.vmax, a.vmax};
  WaveformOptions options;
  options.step_duration = 1e-6 * a.step_us;
  options.slew_limit = a.slew;
  const auto w = design_waveform(ctx.config, path, a.steps, c, options);

  VerifyOptions verify;
  verify.target_axial_frequency = hz_to_rad(target_hz);
  verify.frequency_band = options.frequency_band;
  if (c.require_rf_null) verify.rf_field_limit = options.rf_field_limit;
  const auto r = verify_waveform(ctx.config, w, verify);

  {
    auto f = open_output(dir / "waveform.csv");
    write_waveform_csv(w, f);
  }
  json j;
  j["source"] = ctx.source;
  j["path_m"] = {vec_json(path[0]), vec_json(path[1])};
  j["steps"] = a.steps;
  j["step_duration_s"] = w.step_duration;
  j["target_axial_frequency_Hz"] = target_hz;
  j["all_confining"] = r.all_confining;
  j["all_pass"] = r.all_pass;
  j["monotone"] = r.monotone;
  j["max_path_deviation_m"] = r.max_path_deviation;
  j["max_target_error_m"] = r.max_target_error;
  j["frequency_ripple"] = r.frequency_ripple;
  j["max_abs_q"] = r.max_abs_q;
  j["max_rf_field_V_per_m"] = r.max_rf_field;
  json steps = json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"confining", s.confining},
                     {"failure", s.failure},
                     {"position_m", vec_json(s.position)},
                     {"path_deviation_m", s.path_deviation},
                     {"target_error_m", s.target_error},
                     {"axial_frequency_Hz", rad_to_hz(s.axial_frequency)},
                     {"secular_frequencies_Hz", vec_json(s.frequencies / two_pi)},
                     {"max_abs_q", s.max_abs_q},
                     {"rf_null_residual_V_per_m", s.rf_null_residual},
                     {"violations", s.violations}});
  }
  j["step_reports"] = steps;
  {
    auto f = open_output(dir / "transport_report.json");
    f << j.dump(2) << '\n';
  }
  write_strip(w, r, target_hz, dir / "transport_strip.svg");

  fmt::print(out, "{} steps, max path deviation {:.3g} um, frequency ripple {:.3g}%, max |q| {:.4f}\n", r.steps.size(),
             1e6 * r.max_path_deviation, 100 * r.frequency_ripple, r.max_abs_q);
  if (!r.all_pass) {
    for (std::size_t k = 0; k < r.steps.size(); ++k) {
      const auto& s = r.steps[k];
      if (!s.confining) {
        fmt::print(err, "error: transport step {} is not confining: {}\n", k, s.failure);
        return kNotConfining;
      }
      if (!s.violations.empty()) {
        fmt::print(err, "error: transport step {} fails verification: {}\n", k, s.violations.front());
        return kNotConfining;
      }
    }
    fmt::print(err, "error: transport wells are not monotone along the path\n");
    return kNotConfining;
  }
  fmt::print(out, "all steps verified; wrote {}\n", (dir / "waveform.csv").string());
  return kOk;
}

// ---------------------------------------------------------------------------
// recool

struct RecoolArgs {
  std::string laser = IONTRAP_DATA_DIR "/mg24_d2_laser.json";
  std::optional<double> freq_hz, freq_mhz;
  std::vector<std::string> curves;
  std::vector<double> delays;
  bool fit_scale = false;
  std::optional<double> simulate_se;
  int bins = 100;
  double bin_us = 400.0;
};

int cmd_recool(const GlobalOptions& g, const RecoolArgs& a, std::ostream& out) {
  const auto dir = output_dir(g);
  const IonSpecies ion = ion_by_name(g.ion);
  const double omega = hz_to_rad(frequency_hz(a.freq_hz, a.freq_mhz, 1.125e6, "--freq-hz"));
  LaserParams laser;
  try {
    laser = laser_from_json(read_json_file(a.laser));
  } catch (const json::exception& e) {
    throw ParseError("'" + a.laser + "': " + e.what());
  }
  const RecoolingModel model(ion, laser);

  if (a.simulate_se.has_value() == !a.curves.empty())
    throw ValidationError("recool", "give either --curves or --simulate-se");
  if (!a.curves.empty() && !a.delays.empty() && a.delays.size() != a.curves.size())
    throw ValidationError("--delays-s", "one delay per curve");

  std::vector<RecoolingCurve> curves;
  std::vector<std::string> names;
  json simulated;
  if (a.simulate_se) {
    if (a.delays.empty()) throw ValidationError("--delays-s", "simulation needs delays");
    const double slope = constants::hbar * omega * quanta_rate_from_field_noise({*a.simulate_se, omega}, ion);
    const double e_start = model.steady_state_energy();
    json truth = json::array();
    for (std::size_t k = 0; k < a.delays.size(); ++k) {
      const double e0 = e_start + slope * a.delays[k];
      truth.push_back(e0);
      curves.push_back(poisson_sample(recooling_curve(model, e0, omega, 1e-6 * a.bin_us, a.bins), g.seed + k));
      names.push_back(fmt::format("curve_{:02}.csv", k));
      auto f = open_output(dir / names.back());
      write_curve_csv(curves.back(), f);
    }
    simulated = {{"S_E_V2m2Hz", *a.simulate_se}, {"E0_true_J", truth}, {"seed", g.seed}};
  } else {
    for (const auto& path : a.curves) {
      std::ifstream in(path);
      if (!in) throw IoError("cannot open curve '" + path + "'");
      curves.push_back(read_curve_csv(in));
      names.push_back(path);
    }
  }

  RecoolingFitOptions fit_options;
  fit_options.fit_rate_scale = a.fit_scale;
  json fits = json::array(), e0 = json::array(), e0_sigma = json::array();
  std::vector<DelayPoint> series;
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto fit = fit_recooling(curves[k], model, fit_options);
    json entry{{"curve", names[k]},
               {"E0_J", fit.energy},
               {"E0_sigma_J", fit.energy_sigma},
               {"rate_scale", fit.rate_scale},
               {"unimodal", fit.unimodal},
               {"negative_log_likelihood", fit.negative_log_likelihood}};
    if (!a.delays.empty()) {
      entry["delay_s"] = a.delays[k];
      series.push_back({a.delays[k], fit.energy, fit.energy_sigma});
    }
    fits.push_back(entry);
    e0.push_back(fit.energy);
    e0_sigma.push_back(fit.energy_sigma);
    fmt::print(out, "{}: E0 = {:.4e} +- {:.2e} J\n", names[k], fit.energy, fit.energy_sigma);
  }

  json j;
  j["ion"] = ion.label;
  j["trap_frequency_Hz"] = rad_to_hz(omega);
  j["steady_state_energy_J"] = model.steady_state_energy();
  j["fits"] = fits;
  j["E0_J"] = e0;
  j["E0_sigma_J"] = e0_sigma;
  if (!simulated.is_null()) j["simulated"] = simulated;
  if (series.size() >= 3) {
    const auto h = heating_rate_from_delays(series, ion, omega);
    j["dEdt_J_per_s"] = h.energy_rate;
    j["dEdt_sigma_J_per_s"] = h.energy_rate_sigma;
    j["quanta_per_s"] = h.quanta_per_s;
    j["quanta_per_s_sigma"] = h.quanta_per_s_sigma;
    j["S_E_V2m2Hz"] = h.field_psd;
    j["S_E_sigma_V2m2Hz"] = h.field_psd_sigma;
    j["inconsistent"] = h.inconsistent;
    fmt::print(out, "heating {:.4g} +- {:.2g} quanta/s, S_E {:.4g} +- {:.2g} (V/m)^2/Hz{}\n", h.quanta_per_s,
               h.quanta_per_s_sigma, h.field_psd, h.field_psd_sigma, h.inconsistent ? " (inconsistent: energy falls)" : "");
  }
  auto f = open_output(dir / "recool.json");
  f << j.dump(2) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// convert

struct ConvertArgs {
  std::optional<double> se, quanta;
  std::optional<double> freq_hz, freq_mhz;
  bool json_output = false;
};

int cmd_convert(const GlobalOptions& g, const ConvertArgs& a, std::ostream& out) {
  if (a.se.has_value() == a.quanta.has_value()) throw ValidationError("convert", "give exactly one of --se or --quanta");
  const IonSpecies ion = ion_by_name(g.ion);
  const double f_hz = frequency_hz(a.freq_hz, a.freq_mhz, std::nullopt, "--freq-hz");
  const double omega = hz_to_rad(f_hz);
  const double se = a.se ? *a.se : field_noise_from_quanta_rate(*a.quanta, omega, ion);
  const double quanta = a.quanta ? *a.quanta : quanta_rate_from_field_noise({se, omega}, ion);
  if (a.json_output) {
    const json j{{"S_E_V2m2Hz", se}, {"quanta_per_s", quanta}, {"frequency_Hz", f_hz}, {"ion", ion.label}};
    out << j.dump() << '\n';
  } else if (a.se) {
    fmt::print(out, "{} quanta/s\n", compact_sci(quanta, 3));
  } else {
    fmt::print(out, "{} (V/m)^2/Hz\n", compact_sci(se, 3));
  }
  return kOk;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ion-trap electrode design and heating analysis", "iontrap"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--preset", g.preset, "paper-surface | paper-twolayer");
  app.add_option("--geometry", g.geometry, "geometry JSON file");
  app.add_option("--backend", g.backend, "analytic | bem (default: analytic for one plane, bem otherwise)");
  app.add_option("--out", g.out_dir, "output directory (created if missing)");
  app.add_option("--seed", g.seed, "random seed (recool --simulate-se)");
  app.add_option("--ion", g.ion, "ion species (Mg24)");
  app.add_option("--voltages", g.voltages, "static voltages: {name: volts} or a solve output");
  app.add_option("--rf-amplitude", g.rf_amplitude, "RF amplitude, V zero-to-peak");
  app.add_option("--rf-freq-mhz", g.rf_frequency_mhz, "RF drive frequency, MHz");
  app.add_option("--panel-budget", g.panel_budget, "BEM panel budget");

  CharacterizeArgs ca;
  auto* characterize_cmd = app.add_subcommand("characterize", "trap minimum, modes, depth; JSON, line cuts, SVG");
  characterize_cmd->add_option("--pos", ca.pos, "start point: zone name or x,y,z in m");
  characterize_cmd->add_option("--pos-um", ca.pos_um, "start point x,y,z in um");
  characterize_cmd->add_flag("--no-depth", ca.no_depth, "skip the trap-depth search");
  characterize_cmd->add_option("--grid", ca.grid, "contour grid points per side")->check(CLI::Range(8, 2048));
  characterize_cmd->add_option("--plane", ca.plane, "contour plane through the minimum")->check(CLI::IsMember({"xz", "yz"}));

  SolveArgs sa;
  auto* solve_cmd = app.add_subcommand("solve", "static voltages for a well at a point");
  solve_cmd->add_option("--pos", sa.pos, "zone name (projected onto the RF null) or x,y,z in m")->required();
  auto* t_hz = solve_cmd->add_option("--target-freq-hz", sa.target_hz, "axial frequency, Hz");
  solve_cmd->add_option("--target-freq-mhz", sa.target_mhz, "axial frequency, MHz")->excludes(t_hz);
  solve_cmd->add_flag("--rf-null", sa.rf_null, "project coordinates onto the RF null");
  solve_cmd->add_option("--lambda", sa.lambda, "Tikhonov parameter (default: L-curve corner)");
  solve_cmd->add_option("--vmax", sa.vmax, "voltage bound, V")->check(CLI::PositiveNumber);

  TransportArgs ta;
  auto* transport_cmd = app.add_subcommand("transport", "waveform moving the well between two points");
  transport_cmd->add_option("--from", ta.from, "zone name or x,y,z in m")->required();
  transport_cmd->add_option("--to", ta.to, "zone name or x,y,z in m")->required();
  transport_cmd->add_option("--steps", ta.steps, "waveform steps")->check(CLI::Range(2, 100000));
  auto* tt_hz = transport_cmd->add_option("--target-freq-hz", ta.target_hz, "axial frequency, Hz (1.125e6)");
  transport_cmd->add_option("--target-freq-mhz", ta.target_mhz, "axial frequency, MHz")->excludes(tt_hz);
  transport_cmd->add_option("--step-us", ta.step_us, "step duration, us")->check(CLI::PositiveNumber);
  transport_cmd->add_option("--slew-v", ta.slew, "largest voltage change per step, V")->check(CLI::PositiveNumber);
  transport_cmd->add_option("--vmax", ta.vmax, "voltage bound, V")->check(CLI::PositiveNumber);
  transport_cmd->add_flag("--no-rf-null", ta.no_rf_null, "keep waypoints off the RF null");

  RecoolArgs ra;
  auto* recool_cmd = app.add_subcommand("recool", "Doppler recooling fits and heating rate");
  recool_cmd->add_option("--laser", ra.laser, "laser parameter JSON");
  auto* r_hz = recool_cmd->add_option("--freq-hz", ra.freq_hz, "trap frequency, Hz (1.125e6)");
  recool_cmd->add_option("--freq-mhz", ra.freq_mhz, "trap frequency, MHz")->excludes(r_hz);
  recool_cmd->add_option("--curves", ra.curves, "recooling CSV files")->delimiter(',');
  recool_cmd->add_option("--delays-s", ra.delays, "heating delay per curve, s")->delimiter(',');
  recool_cmd->add_flag("--fit-scale", ra.fit_scale, "also fit an overall count scale");
  recool_cmd->add_option("--simulate-se", ra.simulate_se, "simulate curves for this S_E, (V/m)^2/Hz");
  recool_cmd->add_option("--bins", ra.bins, "simulated bins per curve")->check(CLI::Range(10, 1000000));
  recool_cmd->add_option("--bin-us", ra.bin_us, "simulated bin width, us")->check(CLI::PositiveNumber);

  ConvertArgs va;
  auto* convert_cmd = app.add_subcommand("convert", "field noise <-> heating rate");
  auto* se = convert_cmd->add_option("--se", va.se, "field noise S_E, (V/m)^2/Hz");
  convert_cmd->add_option("--quanta", va.quanta, "heating rate, quanta/s")->excludes(se);
  auto* c_hz = convert_cmd->add_option("--freq-hz", va.freq_hz, "trap frequency, Hz");
  convert_cmd->add_option("--freq-mhz", va.freq_mhz, "trap frequency, MHz")->excludes(c_hz);
  convert_cmd->add_flag("--json", va.json_output, "print JSON");

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    fmt::print(err, "error: {}\n", one_line(e.what()));
    return kUsage;
  }

  try {
    if (*characterize_cmd) return cmd_characterize(g, ca, out);
    if (*solve_cmd) return cmd_solve(g, sa, out);
    if (*transport_cmd) return cmd_transport(g, ta, out, err);
    if (*recool_cmd) return cmd_recool(g, ra, out);
    return cmd_convert(g, va, out);
  } catch (const NotConfiningError& e) {
    const std::string what = one_line(e.what());
    const bool tagged = what.rfind("no confining minimum", 0) == 0;
    fmt::print(err, "error: {}{}\n", tagged ? "" : "no confining minimum: ", what);
    return kNotConfining;
  } catch (const IoError& e) {
    fmt::print(err, "error: {}\n", one_line(e.what()));
    return kIo;
  } catch (const ParseError& e) {
    fmt::print(err, "error: {}\n", one_line(e.what()));
    return kIo;
  } catch (const InfeasibleError& e) {
    fmt::print(err, "error: infeasible: {}\n", one_line(e.what()));
    return kInfeasible;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", one_line(e.what()));
    return kUsage;
  }
}

}  // namespace iontrap::cli
