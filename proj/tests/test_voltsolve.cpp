#include "doctest.h"

#include "iontrap/errors.hpp"
#include "iontrap/presets.hpp"
#include "iontrap/voltsolve.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace iontrap;

namespace {

const presets::OperatingPoint& surface() {
  static const auto op = presets::paper_surface();
  return op;
}

const double kAxial = hz_to_rad(1.125e6);

Vec3 experiment_zone() { return find_rf_null(surface().config.basis(), {371e-6, 0.0, 41e-6}); }
Vec3 load_zone() { return find_rf_null(surface().config.basis(), {0.0, 0.0, 41e-6}); }

Eigen::VectorXd projected_gradient(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda,
                                   const Eigen::VectorXd& prior, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                   const Eigen::VectorXd& v) {
  Eigen::VectorXd g = a.transpose() * (a * v - b) + lambda * (v - prior);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] <= lo[i]) g[i] = std::min(g[i], 0.0);
    if (v[i] >= hi[i]) g[i] = std::max(g[i], 0.0);
  }
  return g;
}

struct RandomProblem {
  Eigen::MatrixXd a;
  Eigen::VectorXd b, prior, lo, hi;
};

RandomProblem random_problem(std::mt19937_64& rng, Eigen::Index m, Eigen::Index n, double box) {
  std::normal_distribution<double> g;
  RandomProblem p{Eigen::MatrixXd(m, n), Eigen::VectorXd(m), Eigen::VectorXd(n), Eigen::VectorXd(n),
                  Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < m; ++i) {
    p.b[i] = 3.0 * g(rng);
    for (Eigen::Index j = 0; j < n; ++j) p.a(i, j) = g(rng);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    p.prior[j] = 0.5 * g(rng);
    p.lo[j] = -box * (0.5 + std::abs(g(rng)));
    p.hi[j] = box * (0.5 + std::abs(g(rng)));
  }
  return p;
}

}  // namespace

TEST_SUITE("bounded regularized least squares") {
  TEST_CASE("unbounded solution matches the stacked least-squares problem") {
    std::mt19937_64 rng(11);
    for (auto [m, n] : {std::pair{7, 20}, std::pair{12, 5}}) {
      auto p = random_problem(rng, m, n, 1e6);
      const double lambda = 0.3;
      Eigen::MatrixXd stacked(m + n, n);
      stacked << p.a, std::sqrt(lambda) * Eigen::MatrixXd::Identity(n, n);
      Eigen::VectorXd rhs(m + n);
      rhs << p.b, std::sqrt(lambda) * p.prior;
      const Eigen::VectorXd oracle = stacked.colPivHouseholderQr().solve(rhs);
      const Eigen::VectorXd v = solve_regularized(p.a, p.b, lambda, p.prior, p.lo, p.hi);
      CHECK((v - oracle).norm() <= 1e-12 * oracle.norm());
    }
  }

  TEST_CASE("KKT: projected gradient vanishes with active bounds") {
    std::mt19937_64 rng(12);
    int with_active = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng() % 10), n = 1 + static_cast<Eigen::Index>(rng() % 25);
      auto p = random_problem(rng, m, n, 0.4);
      const double lambda = std::pow(10.0, -6.0 + 6.0 * static_cast<double>(rng() % 1000) / 1000.0);
      const Eigen::VectorXd v = solve_regularized(p.a, p.b, lambda, p.prior, p.lo, p.hi);
      CHECK((v.array() >= p.lo.array()).all());
      CHECK((v.array() <= p.hi.array()).all());
      const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
      const Eigen::VectorXd g0 = p.a.transpose() * (-p.b) + lambda * (-p.prior);
      CHECK(projected_gradient(p.a, p.b, lambda, p.prior, p.lo, p.hi, v).norm() <= 1e-9 * g0.norm());
      if (((v.array() == p.lo.array()) || (v.array() == p.hi.array())).any()) ++with_active;
      (void)zero;
    }
    CHECK(with_active > 50);
  }

  TEST_CASE("solution norm never grows with lambda") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      auto p = random_problem(rng, 6, 15, trial % 2 ? 0.3 : 1e6);
      p.prior.setZero();
      double previous = std::numeric_limits<double>::infinity();
      for (double lambda = 1e-8; lambda <= 1e4; lambda *= 10) {
        const double norm = solve_regularized(p.a, p.b, lambda, p.prior, p.lo, p.hi).norm();
        CHECK(norm <= previous * (1 + 1e-12));
        previous = norm;
      }
    }
  }

  TEST_CASE("invalid inputs") {
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(2, 2);
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(2), z = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(solve_regularized(a, b, 0.0, z, -b, b), ValidationError);
    CHECK_THROWS_AS(solve_regularized(a, b, 1.0, z, b, b), ValidationError);
    CHECK_THROWS_AS(solve_regularized(a, Eigen::VectorXd::Ones(3), 1.0, z, -b, b), ValidationError);
  }
}

TEST_SUITE("L-curve") {
  TEST_CASE("consistent full-rank system takes the smallest lambda") {
    std::mt19937_64 rng(21);
    auto p = random_problem(rng, 5, 12, 1.0);
    const double top = std::pow(p.a.jacobiSvd().singularValues()[0], 2);
    CHECK(l_curve_lambda(p.a, p.b) == doctest::Approx(1e-12 * top).epsilon(1e-9));
  }

  TEST_CASE("noisy ill-posed system has an interior corner that beats both ends") {
    // Discretized smoothing kernel: singular values decay geometrically.
    const int n = 24;
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = std::exp(-0.5 * std::pow((i - j) / 3.0, 2)) / n;
    Eigen::VectorXd truth(n);
    for (int j = 0; j < n; ++j) truth[j] = std::sin(3.0 * j / n);
    std::mt19937_64 rng(22);
    std::normal_distribution<double> g(0.0, 1e-4);
    Eigen::VectorXd b = a * truth;
    for (int i = 0; i < n; ++i) b[i] += g(rng);

    const double top = std::pow(a.jacobiSvd().singularValues()[0], 2);
    const double lambda = l_curve_lambda(a, b);
    CHECK(lambda > 1e-12 * top);
    CHECK(lambda < top);
    const Eigen::VectorXd big = Eigen::VectorXd::Constant(n, 1e9);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    auto error = [&](double l) { return (solve_regularized(a, b, l, zero, -big, big) - truth).norm(); };
    CHECK(error(lambda) < error(1e-12 * top));
    CHECK(error(lambda) < error(top));
  }
}

TEST_CASE("constraint rows predict the scaled force and curvature exactly") {
  const auto& cfg = surface().config;
  const auto& basis = cfg.basis();
  WellConstraint c;
  c.axial_frequency = kAxial;
  const Vec3 p = experiment_zone();
  const auto free = basis.indices_with_role(ElectrodeRole::DC);
  const auto rows = constraint_rows(cfg, c, free, p, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size())));
  REQUIRE(rows.matrix.rows() == 6);

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(free.size()));
  std::map<std::string, double> volts;
  for (std::size_t j = 0; j < free.size(); ++j) {
    v[static_cast<Eigen::Index>(j)] = u(rng);
    volts[basis.names()[free[j]]] = v[static_cast<Eigen::Index>(j)];
  }
  const auto e = effective_potential(cfg.with_static_voltages(volts), p, kHessian);
  const double k_ref = cfg.ion().mass * kAxial * kAxial;
  const Eigen::VectorXd predicted = rows.matrix * v - rows.rhs;
  for (int r = 0; r < 3; ++r) CHECK(predicted[r] == doctest::Approx(e.gradient[r] / (k_ref * basis.length_scale())).epsilon(1e-9));
  const Vec3 ez = basis.trap_axis().normalized();
  CHECK(predicted[3] == doctest::Approx(ez.dot(e.hessian * ez) / k_ref - 1.0).epsilon(1e-9));
}

TEST_SUITE("static solve") {
  TEST_CASE("experiment zone: mirror-symmetric voltages with the published sign pattern") {
    WellConstraint c;
    c.target_position = experiment_zone();
    c.axial_frequency = kAxial;
    c.require_rf_null = true;
    const auto s = solve_static(surface().config, c);
    const auto& v = s.voltages;
    CHECK(std::abs(v.at("E1") - v.at("E6")) <= 1e-9);
    CHECK(std::abs(v.at("E2") - v.at("E5")) <= 1e-9);
    CHECK(std::abs(v.at("E3") - v.at("E4")) <= 1e-9);
    CHECK(v.at("E1") > 0);
    CHECK(v.at("E6") > 0);
    CHECK(v.at("E2") < 0);
    CHECK(v.at("E5") < 0);
    CHECK(s.position_error <= 0.5e-6);
    CHECK(*s.axial_frequency == doctest::Approx(kAxial).epsilon(0.005));
    CHECK(s.rf_null_residual <= 10.0);
    for (const auto& [name, volts] : v) CHECK(std::abs(volts) <= 10.0);
  }

  TEST_CASE("round trip: random voltage sets are recovered as wells") {
    const auto& cfg = surface().config;
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (int trial = 0; trial < 5; ++trial) {
      CAPTURE(trial);
      auto volts = presets::surface_static_voltages();
      for (auto& [name, value] : volts) value *= 1.0 + u(rng);
      const auto forward = characterize(cfg.with_static_voltages(volts), surface().seed, {.compute_depth = false});
      WellConstraint c;
      c.target_position = forward.minimum.position;
      c.axial_frequency = forward.modes.labeled_frequencies().z();
      c.axes = forward.modes.labeled_axes();
      const auto s = solve_static(cfg, c);
      const auto back = characterize(cfg.with_static_voltages(s.voltages), c.target_position, {.compute_depth = false});
      CHECK((back.minimum.position - forward.minimum.position).norm() <= 0.1e-6);
      CHECK(back.modes.labeled_frequencies().z() == doctest::Approx(*c.axial_frequency).epsilon(0.005));
    }
  }

  TEST_CASE("unreachable targets are infeasible") {
    WellConstraint c;
    c.target_position = experiment_zone();
    c.axial_frequency = kAxial;
    c.default_bounds = {-0.01, 0.01};
    CHECK_THROWS_AS(solve_static(surface().config, c), InfeasibleError);
    c.default_bounds = {};
    c.axial_frequency = hz_to_rad(30e6);
    CHECK_THROWS_AS(solve_static(surface().config, c), InfeasibleError);
  }

  TEST_CASE("constraint validation") {
    WellConstraint c;
    c.default_bounds = {1.0, -1.0};
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c.default_bounds = {};
    c.axes = Mat3::Identity() * 2.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c.axes.reset();
    c.axial_frequency = -1.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
  }
}

TEST_SUITE("transport") {
  TEST_CASE("waypoints are symmetric under path reversal") {
    const std::vector<Vec3> fwd{{0.1, -0.3, 0.7}, {3.7, 1.1, -0.2}};
    const std::vector<Vec3> rev{fwd[1], fwd[0]};
    const auto a = waypoints(fwd, 17), b = waypoints(rev, 17);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[a.size() - 1 - k]);
    CHECK(a.front() == fwd[0]);
    CHECK(a.back() == fwd[1]);
    const std::vector<Vec3> bent{{0, 0, 0}, {1, 0, 0}, {1, 2, 0}};
    const auto c = waypoints(bent, 4);
    CHECK((c[1] - Vec3(1, 0, 0)).norm() <= 1e-15);
    CHECK((c[2] - Vec3(1, 1, 0)).norm() <= 1e-15);
    CHECK_THROWS_AS(waypoints(fwd, 1), ValidationError);
  }

  TEST_CASE("degenerate path repeats the static solution") {
    WellConstraint c;
    c.target_position = experiment_zone();
    c.axial_frequency = kAxial;
    const std::vector<Vec3> path{c.target_position, c.target_position};
    const auto w = design_waveform(surface().config, path, 2, c);
    const auto s = solve_static(surface().config, c);
    REQUIRE(w.steps.size() == 2);
    CHECK(w.steps[0].voltages == s.voltages);
    CHECK(w.steps[1].voltages == s.voltages);
  }

  TEST_CASE("reversed path gives the reversed voltage sequence") {
    WellConstraint c;
    c.axial_frequency = kAxial;
    c.require_rf_null = true;
    const std::vector<Vec3> fwd{load_zone(), experiment_zone()};
    const std::vector<Vec3> rev{fwd[1], fwd[0]};
    const auto a = design_waveform(surface().config, fwd, 9, c);
    const auto b = design_waveform(surface().config, rev, 9, c);
    for (std::size_t k = 0; k < a.steps.size(); ++k)
      for (const auto& [name, volts] : a.steps[k].voltages)
        CHECK(std::abs(volts - b.steps[a.steps.size() - 1 - k].voltages.at(name)) <= 1e-9);
  }

  TEST_CASE("load zone to experiment zone in 64 steps") {
    WellConstraint c;
    c.axial_frequency = kAxial;
    c.require_rf_null = true;
    const std::vector<Vec3> path{load_zone(), experiment_zone()};
    const auto w = design_waveform(surface().config, path, 64, c);
    REQUIRE(w.steps.size() == 64);
    const auto report =
        verify_waveform(surface().config, w, {.target_axial_frequency = kAxial, .rf_field_limit = 10.0});
    CHECK(report.all_confining);
    CHECK(report.monotone);
    CHECK(report.all_pass);
    CHECK(report.max_path_deviation <= 1e-6);
    CHECK(report.frequency_ripple <= 0.05);
    CHECK(report.max_abs_q < 0.9);

    SUBCASE("a zeroed step is flagged") {
      auto broken = w;
      for (auto& [name, volts] : broken.steps[10].voltages) volts = 0.0;
      const auto r = verify_waveform(surface().config, broken, {.target_axial_frequency = kAxial});
      CHECK_FALSE(r.steps[10].confining);
      CHECK_FALSE(r.steps[10].failure.empty());
      CHECK_FALSE(r.all_confining);
      CHECK(r.steps[9].confining);
      CHECK(r.steps[11].confining);
    }

    SUBCASE("a global offset including the reference changes nothing") {
      auto shifted = w;
      auto& step = shifted.steps[20];
      for (auto& [name, volts] : step.voltages) volts += 0.5;
      step.reference_voltage += 0.5;
      const auto r = verify_waveform(surface().config, shifted, {.target_axial_frequency = kAxial});
      const auto& x = r.steps[20];
      const auto& y = report.steps[20];
      CHECK(x.confining);
      CHECK((x.position - y.position).norm() <= 1e-9 * 1e-6);
      for (int k = 0; k < 3; ++k) CHECK(x.frequencies[k] == doctest::Approx(y.frequencies[k]).epsilon(1e-9));
      CHECK(x.max_abs_q == doctest::Approx(y.max_abs_q).epsilon(1e-9));
    }

    SUBCASE("CSV round trip") {
      std::stringstream ss;
      write_waveform_csv(w, ss);
      const auto back = read_waveform_csv(ss);
      REQUIRE(back.steps.size() == w.steps.size());
      CHECK(back.step_duration == doctest::Approx(w.step_duration).epsilon(1e-15));
      for (std::size_t k = 0; k < w.steps.size(); ++k) {
        CHECK(back.steps[k].voltages == w.steps[k].voltages);
        CHECK(back.steps[k].well_position == w.steps[k].well_position);
        CHECK(back.steps[k].axial_frequency == doctest::Approx(w.steps[k].axial_frequency).epsilon(1e-15));
      }
    }
  }

  TEST_CASE("failing steps are reported by index") {
    WellConstraint c;
    c.axial_frequency = kAxial;
    c.default_bounds = {-0.05, 0.05};
    const std::vector<Vec3> path{load_zone(), experiment_zone()};
    try {
      design_waveform(surface().config, path, 4, c);
      FAIL("expected an infeasible step");
    } catch (const InfeasibleError& e) {
      CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
  }

  TEST_CASE("malformed waveform CSV") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_waveform_csv(empty), ParseError);
    std::istringstream header("step,t,V_A,x,y,z,omega_z_Hz\n");
    CHECK_THROWS_AS(read_waveform_csv(header), ParseError);
    std::istringstream number("step,t_seconds,V_A,x,y,z,omega_z_Hz\n0,0,abc,0,0,0,0\n");
    CHECK_THROWS_AS(read_waveform_csv(number), ParseError);
    std::istringstream fields("step,t_seconds,V_A,x,y,z,omega_z_Hz\n0,0,1,0,0\n");
    CHECK_THROWS_AS(read_waveform_csv(fields), ParseError);
  }
}
