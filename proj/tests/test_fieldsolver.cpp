#include "doctest.h"

#include "iontrap/basis.hpp"
#include "iontrap/bem.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/geometry.hpp"
#include "iontrap/kernels.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace iontrap;

namespace {

Polygon rect(double x0, double y0, double x1, double y1) { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }

// Independent quadrature of a kernel over an axis-aligned rectangle.
template <class F>
double integrate_rect(double x0, double y0, double x1, double y1, F f) {
  using boost::math::quadrature::gauss_kronrod;
  auto inner = [&](double x) {
    return gauss_kronrod<double, 61>::integrate([&](double y) { return f(x, y); }, y0, y1, 12, 1e-13);
  };
  return gauss_kronrod<double, 61>::integrate(inner, x0, x1, 12, 1e-13);
}

Vec3 fd_gradient(const std::function<double(const Vec3&)>& f, const Vec3& p, double h) {
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    const Vec3 e = h * Vec3::Unit(i);
    g[i] = (-f(p + 2 * e) + 8 * f(p + e) - 8 * f(p - e) + f(p - 2 * e)) / (12 * h);
  }
  return g;
}

Mat3 fd_jacobian(const std::function<Vec3(const Vec3&)>& f, const Vec3& p, double h) {
  Mat3 j;
  for (int i = 0; i < 3; ++i) {
    const Vec3 e = h * Vec3::Unit(i);
    j.col(i) = (-f(p + 2 * e) + 8 * f(p + e) - 8 * f(p - e) + f(p - 2 * e)) / (12 * h);
  }
  return j;
}

ElectrodeLayout rf_and_dc_squares() {
  std::vector<Electrode> els{{"RF", {rect(-1e-4, -1e-4, 1e-4, 1e-4)}, 0.0, ElectrodeRole::RF},
                             {"DC", {rect(2e-4, -1e-4, 4e-4, 1e-4)}, 0.0, ElectrodeRole::DC}};
  return ElectrodeLayout(std::move(els), {0.0});
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("solid angle: quarter plane and full plane limits") {
    const Polygon sq = rect(0, 0, 1, 1);
    const double h = 1e-5;
    CHECK(kernels::solid_angle(sq, 0.0, {0, 0, h}).value / two_pi == doctest::Approx(0.25).epsilon(1e-3));
    CHECK(kernels::solid_angle(sq, 0.0, {0.5, 0.5, h}).value / two_pi == doctest::Approx(1.0).epsilon(1e-3));
    // Below the plane the sign flips.
    CHECK(kernels::solid_angle(sq, 0.0, {0.5, 0.5, -h}).value / two_pi == doctest::Approx(-1.0).epsilon(1e-3));
  }

  TEST_CASE("solid angle matches quadrature of h/R^3") {
    const double x0 = -0.3, y0 = 0.1, x1 = 0.7, y1 = 0.4;
    const Polygon r = rect(x0, y0, x1, y1);
    for (const Vec3& p : {Vec3(0.0, 0.0, 0.5), Vec3(1.2, -0.4, 0.3), Vec3(0.2, 0.2, 0.05)}) {
      const double ref = integrate_rect(x0, y0, x1, y1, [&](double x, double y) {
        const double R = std::sqrt((p.x() - x) * (p.x() - x) + (p.y() - y) * (p.y() - y) + p.z() * p.z());
        return p.z() / (R * R * R);
      });
      CHECK(kernels::solid_angle(r, 0.0, p).value == doctest::Approx(ref).epsilon(1e-10));
    }
  }

  TEST_CASE("solid angle of a non-convex polygon is additive over a split") {
    const Polygon ell{{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}};
    const Vec3 p(0.7, 0.4, 0.6);
    const double parts = kernels::solid_angle(rect(0, 0, 2, 1), 0.0, p).value +
                         kernels::solid_angle(rect(0, 1, 1, 2), 0.0, p).value;
    CHECK(kernels::solid_angle(ell, 0.0, p).value == doctest::Approx(parts).epsilon(1e-13));
  }

  TEST_CASE("solid angle derivatives match finite differences and are harmonic") {
    const Polygon poly{{0, 0}, {1, -0.2}, {1.3, 0.8}, {0.4, 1.1}, {-0.2, 0.5}};
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ux(-1.0, 2.0), uz(0.1, 1.5);
    for (int k = 0; k < 20; ++k) {
      const Vec3 p(ux(rng), ux(rng), 0.3 + uz(rng));
      const auto d = kernels::solid_angle(poly, 0.3, p, 2);
      const Vec3 g = fd_gradient([&](const Vec3& q) { return kernels::solid_angle(poly, 0.3, q).value; }, p, 1e-4);
      CHECK((d.gradient - g).norm() <= 1e-8 * d.gradient.norm());
      const Mat3 h = fd_jacobian([&](const Vec3& q) { return kernels::solid_angle(poly, 0.3, q, 1).gradient; }, p, 1e-4);
      CHECK((d.hessian - h).norm() <= 1e-7 * d.hessian.norm());
      CHECK(std::abs(d.hessian.trace()) <= 1e-10 * d.hessian.norm());
      CHECK((d.hessian - d.hessian.transpose()).norm() <= 1e-12 * d.hessian.norm());
    }
  }

  TEST_CASE("uniform density potential matches quadrature of 1/R") {
    const double x0 = -0.3, y0 = 0.1, x1 = 0.7, y1 = 0.4;
    const Polygon r = rect(x0, y0, x1, y1);
    for (const Vec3& p : {Vec3(0.0, 0.0, 0.5), Vec3(1.2, -0.4, -0.3), Vec3(0.2, 0.2, 0.05), Vec3(-2, 3, 0.01)}) {
      const double ref = integrate_rect(x0, y0, x1, y1, [&](double x, double y) {
        return 1.0 / std::sqrt((p.x() - x) * (p.x() - x) + (p.y() - y) * (p.y() - y) + p.z() * p.z());
      });
      CHECK(kernels::uniform_density_potential(r, 0.0, p).value == doctest::Approx(ref).epsilon(1e-10));
    }
  }

  TEST_CASE("uniform density potential in its own plane (collocation self term)") {
    // Unit square, centre: 4 ln(1 + sqrt 2) in closed form.
    const Polygon sq = rect(-0.5, -0.5, 0.5, 0.5);
    CHECK(kernels::uniform_density_potential(sq, 0.0, {0, 0, 0}).value ==
          doctest::Approx(4.0 * std::log(1.0 + std::sqrt(2.0))).epsilon(1e-13));
    // Point on the extension of an edge line.
    const double ref = integrate_rect(-0.5, -0.5, 0.5, 0.5, [](double x, double y) {
      return 1.0 / std::sqrt((2.0 - x) * (2.0 - x) + (0.5 - y) * (0.5 - y) + 1e-30);
    });
    CHECK(kernels::uniform_density_potential(sq, 0.0, {2.0, 0.5, 0}).value == doctest::Approx(ref).epsilon(1e-8));
  }

  TEST_CASE("uniform density potential derivatives match finite differences") {
    const Polygon tri{{0, 0}, {1, 0.1}, {0.3, 0.9}};
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ux(-1.0, 2.0), uz(0.05, 1.0);
    for (int k = 0; k < 20; ++k) {
      const double sgn = (k % 2) ? 1.0 : -1.0;
      const Vec3 p(ux(rng), ux(rng), sgn * uz(rng));
      const auto d = kernels::uniform_density_potential(tri, 0.0, p, 2);
      const Vec3 g = fd_gradient(
          [&](const Vec3& q) { return kernels::uniform_density_potential(tri, 0.0, q).value; }, p, 1e-4);
      CHECK((d.gradient - g).norm() <= 1e-8 * d.gradient.norm());
      const Mat3 h = fd_jacobian(
          [&](const Vec3& q) { return kernels::uniform_density_potential(tri, 0.0, q, 1).gradient; }, p, 1e-4);
      CHECK((d.hessian - h).norm() <= 1e-7 * d.hessian.norm());
      CHECK(std::abs(d.hessian.trace()) <= 1e-10 * d.hessian.norm());
    }
  }
}

namespace {

// n x n tiles of side `pitch - gap`, gap `gap`, outer edges open.
ElectrodeLayout tiled_plane(int n, double pitch, double gap) {
  std::vector<Electrode> els;
  const double half = n * pitch / 2;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double x0 = -half + i * pitch + (i == 0 ? 0.0 : gap / 2), x1 = -half + (i + 1) * pitch - (i == n - 1 ? 0.0 : gap / 2);
      double y0 = -half + j * pitch + (j == 0 ? 0.0 : gap / 2), y1 = -half + (j + 1) * pitch - (j == n - 1 ? 0.0 : gap / 2);
      els.push_back({"T" + std::to_string(i) + std::to_string(j), {rect(x0, y0, x1, y1)}, 0.0,
                     (i == n / 2 && j == n / 2) ? ElectrodeRole::RF : ElectrodeRole::DC});
    }
  return ElectrodeLayout(std::move(els), {0.0}, {{"gap_m", gap}, {"open_boundary", true}});
}

}  // namespace

TEST_SUITE("analytic basis") {
  TEST_CASE("large electrode approaches unit potential") {
    const double h = 10e-6, L = 1e4 * h;
    std::vector<Electrode> els{{"A", {rect(-L / 2, -L / 2, L / 2, L / 2)}, 0.0, ElectrodeRole::RF},
                               {"B", {rect(L, 0, 2 * L, L)}, 0.0, ElectrodeRole::DC}};
    const auto basis = build_analytic_basis(ElectrodeLayout(std::move(els), {0.0}));
    CHECK(basis.potential("A", {0, 0, h}) == doctest::Approx(1.0).epsilon(1e-3));
  }

  TEST_CASE("corner of a square sees a quarter") {
    const auto basis = build_analytic_basis(rf_and_dc_squares());
    CHECK(basis.potential("RF", {1e-4, 1e-4, 1e-7}) == doctest::Approx(0.25).epsilon(1e-3));
  }

  TEST_CASE("potential decays far from the layout") {
    const auto basis = build_analytic_basis(rf_and_dc_squares());
    const double far = 1e3 * 6e-4;
    for (const auto& p : {Vec3(0, 0, far), Vec3(far, 0, 1e-6), Vec3(-far, far, far)})
      for (std::size_t i = 0; i < basis.size(); ++i) CHECK(std::abs(basis.derivs(i, p, kValue).value) <= 1e-6);
  }

  TEST_CASE("completeness on a fully tiled plane") {
    const auto layout = tiled_plane(5, 100e-6, 4e-6);
    const auto basis = build_analytic_basis(layout);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uxy(-250e-6, 250e-6), uz(1e-6, 500e-6 / 4);
    for (int k = 0; k < 200; ++k) {
      const Vec3 p(uxy(rng), uxy(rng), uz(rng));
      double sum = 0;
      for (const auto& d : basis.all(p, kValue)) sum += d.value;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  TEST_CASE("maximum principle on random points above the surface trap") {
    const auto basis = build_analytic_basis(builtin_surface_trap());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ux(-1.5e-3, 1.5e-3), uy(-400e-6, 400e-6), lz(std::log(1e-7), std::log(1e-3));
    int violations = 0;
    for (int k = 0; k < 10000; ++k) {
      const Vec3 p(ux(rng), uy(rng), std::exp(lz(rng)));
      for (const auto& d : basis.all(p, kValue))
        if (d.value < -1e-12 || d.value > 1.0 + 1e-12) ++violations;
    }
    CHECK(violations == 0);
  }

  TEST_CASE("harmonic and consistent derivatives at least two gaps from the plane") {
    const auto layout = builtin_surface_trap();
    const auto basis = build_analytic_basis(layout);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ux(-500e-6, 500e-6), uy(-200e-6, 200e-6), uz(2 * layout.gap(), 300e-6);
    for (int k = 0; k < 30; ++k) {
      const Vec3 p(ux(rng), uy(rng), uz(rng));
      const double h = 1e-3 * p.z();
      for (std::size_t i = 0; i < basis.size(); i += 4) {
        const auto d = basis.derivs(i, p);
        CHECK(std::abs(d.hessian.trace()) <= 1e-6 * d.hessian.norm());
        const Vec3 g = fd_gradient([&](const Vec3& q) { return basis.derivs(i, q, kValue).value; }, p, h);
        CHECK((d.gradient - g).norm() <= 1e-6 * d.gradient.norm());
        const Mat3 hs = fd_jacobian([&](const Vec3& q) { return basis.derivs(i, q, kGradient).gradient; }, p, h);
        CHECK((d.hessian - hs).norm() <= 1e-6 * d.hessian.norm());
      }
    }
  }

  TEST_CASE("superposition is linear in the voltages") {
    const auto basis = build_analytic_basis(builtin_surface_trap());
    const std::map<std::string, double> v{{"E1", 0.71}, {"E2", -0.58}, {"E_CTR", 0.11}};
    const Vec3 p(371e-6, 5e-6, 40e-6);
    const auto total = basis.evaluate_total(v, p);
    FieldDerivs sum;
    for (const auto& [name, volts] : v) {
      const auto d = basis.derivs(basis.index_of(name), p);
      sum.value += volts * d.value;
      sum.gradient += volts * d.gradient;
      sum.hessian += volts * d.hessian;
    }
    CHECK(total.value == doctest::Approx(sum.value).epsilon(1e-14));
    CHECK((total.gradient - sum.gradient).norm() <= 1e-14 * sum.gradient.norm());
    CHECK((total.hessian - sum.hessian).norm() <= 1e-14 * sum.hessian.norm());
  }

  TEST_CASE("slot gap model interpolates smoothly across a gap") {
    // Two half-planes with a gap; at the gap centre each side contributes 1/2.
    std::vector<Electrode> els{{"L", {rect(-1, -1, -2e-6, 1)}, 0.0, ElectrodeRole::RF},
                               {"R", {rect(2e-6, -1, 1, 1)}, 0.0, ElectrodeRole::DC}};
    for (const char* model : {"slot", "split"}) {
      const auto basis = build_analytic_basis(ElectrodeLayout(els, {0.0}, {{"gap_m", 4e-6}, {"gap_model", model}}));
      CHECK(basis.potential("L", {0, 0, 1e-9}) == doctest::Approx(0.5).epsilon(1e-6));
      CHECK(basis.potential("L", {-1e-6, 0, 1e-9}) > 0.5);
    }
  }

  TEST_CASE("slot gap model reproduces the thin-slot boundary profile") {
    // Long electrodes either side of a gap: 2D Poisson integral of the
    // profile 1/2 - asin(2u/g)/pi across the gap is the reference.
    const double g = 4e-6;
    std::vector<Electrode> els{{"L", {rect(-1, -1, -g / 2, 1)}, 0.0, ElectrodeRole::RF},
                               {"R", {rect(g / 2, -1, 1, 1)}, 0.0, ElectrodeRole::DC}};
    const auto basis = build_analytic_basis(ElectrodeLayout(els, {0.0}, {{"gap_m", g}}));
    using boost::math::quadrature::gauss_kronrod;
    for (double h : {g, 2 * g})
      for (double x : {-3e-6, -1e-6, 0.5e-6, 2.5e-6}) {
        const double outside = (std::atan((-g / 2 - x) / h) + constants::pi / 2) / constants::pi;
        const double inside = gauss_kronrod<double, 61>::integrate(
            [&](double u) {
              const double profile = 0.5 - std::asin(std::clamp(2 * u / g, -1.0, 1.0)) / constants::pi;
              return h / ((x - u) * (x - u) + h * h) * profile / constants::pi;
            },
            -g / 2, g / 2, 15, 1e-12);
        CHECK(basis.potential("L", {x, 0, h}) == doctest::Approx(outside + inside).epsilon(1e-3));
      }
  }

  TEST_CASE("points on or below the plane are rejected") {
    const auto basis = build_analytic_basis(rf_and_dc_squares());
    CHECK_THROWS_AS(basis.potential("RF", {0, 0, 0}), EvaluationError);
    CHECK_THROWS_AS(basis.potential("RF", {0, 0, -1e-6}), EvaluationError);
  }

  TEST_CASE("unknown electrode names are rejected") {
    const auto basis = build_analytic_basis(rf_and_dc_squares());
    CHECK_THROWS_AS(basis.potential("NOPE", {0, 0, 1e-5}), ValidationError);
    CHECK_THROWS_AS(basis.voltage_vector({{"NOPE", 1.0}}), ValidationError);
  }

  TEST_CASE("grid export writes one column per electrode") {
    const auto basis = build_analytic_basis(rf_and_dc_squares());
    const std::vector<Vec3> pts{{0, 0, 1e-5}, {1e-4, 0, 2e-5}};
    std::ostringstream out;
    write_grid_csv(basis, pts, out);
    std::istringstream in(out.str());
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "x,y,z,phi_RF,phi_DC");
    int rows = 0;
    while (std::getline(in, row)) ++rows;
    CHECK(rows == 2);
  }
}

TEST_SUITE("bem") {
  TEST_CASE("parallel plates: midpoint at half the plate voltage") {
    const double side = 2e-3, sep = 100e-6;
    std::vector<Electrode> els{{"TOP", {rect(-side / 2, -side / 2, side / 2, side / 2)}, sep, ElectrodeRole::RF},
                               {"BOT", {rect(-side / 2, -side / 2, side / 2, side / 2)}, 0.0, ElectrodeRole::DC}};
    const auto basis = build_bem_basis(ElectrodeLayout(std::move(els), {0.0, sep}), {1200});
    CHECK(basis.potential("TOP", {0, 0, sep / 2}) == doctest::Approx(0.5).epsilon(0.02));
    CHECK(std::abs(basis.potential("TOP", {0, 0, sep / 2}) - 0.5) <= 0.01);
    CHECK(basis.potential("TOP", {0, 0, 0.9 * sep}) == doctest::Approx(0.9).epsilon(0.02));
  }

  TEST_CASE("panels tile every electrode and the solve is accurate") {
    const auto layout = rf_and_dc_squares();
    const auto panels = bem::panelize_to_budget(layout, 600, bem::default_size_field(layout));
    REQUIRE(panels.size() <= 600);
    std::vector<double> area(layout.size(), 0.0);
    std::vector<int> count(layout.size(), 0);
    for (const auto& p : panels) {
      area[p.owner] += p.area;
      ++count[p.owner];
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      CHECK(count[i] >= 4);
      CHECK(area[i] == doctest::Approx(polygon::area(layout.electrodes()[i].polygons[0])).epsilon(1e-12));
    }
    const bem::BemEvaluator ev(panels, layout.planes(), layout.size());
    CHECK(ev.relative_residual() <= 1e-10);
    // Collocation: each panel centroid sits at its owner's potential.
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(2, 2);
    std::vector<FieldDerivs> out(2);
    const auto& p = panels[panels.size() / 3];
    ev.combine({p.centroid.x(), p.centroid.y(), 1e-11}, kValue, w, out);
    CHECK(out[p.owner].value == doctest::Approx(1.0).epsilon(1e-3));
  }

  TEST_CASE("bem potentials are harmonic, bounded and match finite differences") {
    const auto basis = build_bem_basis(rf_and_dc_squares(), {600});
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> ux(-2e-4, 5e-4), uy(-2e-4, 2e-4), uz(20e-6, 300e-6);
    for (int k = 0; k < 10; ++k) {
      const Vec3 p(ux(rng), uy(rng), uz(rng));
      for (std::size_t i = 0; i < basis.size(); ++i) {
        const auto d = basis.derivs(i, p);
        CHECK(d.value >= -1e-9);
        CHECK(d.value <= 1.0 + 1e-9);
        CHECK(std::abs(d.hessian.trace()) <= 1e-6 * d.hessian.norm());
        const Vec3 g = fd_gradient([&](const Vec3& q) { return basis.derivs(i, q, kValue).value; }, p, 1e-3 * p.z());
        CHECK((d.gradient - g).norm() <= 1e-6 * d.gradient.norm());
      }
    }
  }

  TEST_CASE("bem agrees with the analytic plane away from the gaps") {
    // Narrow gaps keep the gapless-plane approximation tight.
    const double w = 100e-6, g = 2e-6, b = 1e-3, a = w / 2 + g;
    std::vector<Electrode> els{{"E", {rect(-w / 2, -w / 2, w / 2, w / 2)}, 0.0, ElectrodeRole::RF},
                               {"GL", {rect(-b, -b, -a, b)}, 0.0, ElectrodeRole::DC},
                               {"GR", {rect(a, -b, b, b)}, 0.0, ElectrodeRole::DC},
                               {"GB", {rect(-a, -b, a, -a)}, 0.0, ElectrodeRole::DC},
                               {"GT", {rect(-a, a, a, b)}, 0.0, ElectrodeRole::DC}};
    const ElectrodeLayout layout(std::move(els), {0.0}, {{"gap_m", g}});
    bem::SizeField f;
    f.min_size = 4e-6;
    f.focus_radius = 100e-6;
    f.focus_weight = 1.0;
    const auto bem_basis = bem::build_bem_basis(layout, f);
    const auto analytic = build_analytic_basis(layout);
    for (double h : {25e-6, 50e-6, 100e-6})
      for (double x : {0.0, 30e-6, 60e-6}) {
        const Vec3 p(x, 0.2 * x, h);
        CHECK(std::abs(bem_basis.potential("E", p) - analytic.potential("E", p)) <= 1e-3);
      }
  }

  TEST_CASE("bem rejects points on an electrode plane and tiny budgets") {
    const auto layout = rf_and_dc_squares();
    CHECK_THROWS_AS(build_bem_basis(layout, {4}), ValidationError);
    const auto basis = build_bem_basis(layout, {200});
    CHECK_THROWS_AS(basis.potential("RF", {0, 0, 0}), EvaluationError);
    CHECK(basis.potential("RF", {0, 0, -50e-6}) == doctest::Approx(basis.potential("RF", {0, 0, 50e-6})).epsilon(1e-12));
  }
}
