#include "doctest.h"

#include "iontrap/errors.hpp"
#include "iontrap/heating.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace iontrap;

namespace {

LaserParams d2_laser() {
  std::ifstream f(IONTRAP_DATA_DIR "/mg24_d2_laser.json");
  REQUIRE(f.good());
  return laser_from_json(nlohmann::json::parse(f));
}

const double kAxial = hz_to_rad(1.125e6);

// Unaveraged excited-state population at velocity v along the mode.
double rho_ee(const LaserParams& l, double v) {
  const double x = 2.0 * (l.detuning - l.wavenumber() * l.projection * v) / l.linewidth;
  return 0.5 * l.saturation / (1.0 + l.saturation + x * x);
}

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_SUITE("noise conversion") {
  TEST_CASE("1e-10 (V/m)^2/Hz at 1.125 MHz is 2.16e4 quanta/s for 24Mg+") {
    // q^2 S / (4 m hbar omega) evaluated term by term.
    const double q = 1.602176634e-19, m = 23.985042 * 1.66053907e-27, hbar = 1.054571817e-34;
    const double expected = q * q * 1e-10 / (4 * m * hbar * 2 * 3.141592653589793 * 1.125e6);
    const double n = quanta_rate_from_field_noise({1e-10, kAxial}, mg24_ion());
    CHECK(n == doctest::Approx(expected).epsilon(1e-12));
    CHECK(n == doctest::Approx(2.16e4).epsilon(0.01));
    CHECK(quanta_rate_from_field_noise({0.0, kAxial}, mg24_ion()) == 0.0);
  }

  TEST_CASE("round trip and scaling") {
    const auto ion = mg24_ion();
    for (double s : {1e-14, 3e-12, 1e-10, 7e-8}) {
      const double n = quanta_rate_from_field_noise({s, kAxial}, ion);
      CHECK(field_noise_from_quanta_rate(n, kAxial, ion) == doctest::Approx(s).epsilon(1e-12));
      CHECK(quanta_rate_from_field_noise({2 * s, kAxial}, ion) / n == doctest::Approx(2.0).epsilon(1e-12));
      CHECK(quanta_rate_from_field_noise({s, 3 * kAxial}, ion) / n == doctest::Approx(1.0 / 3).epsilon(1e-12));
      IonSpecies heavy = ion;
      heavy.mass *= 2.5;
      CHECK(quanta_rate_from_field_noise({s, kAxial}, heavy) / n == doctest::Approx(1.0 / 2.5).epsilon(1e-12));
    }
    CHECK_THROWS_AS(quanta_rate_from_field_noise({-1.0, kAxial}, ion), ValidationError);
    CHECK_THROWS_AS(quanta_rate_from_field_noise({1.0, 0.0}, ion), ValidationError);
  }
}

TEST_SUITE("recooling model") {
  TEST_CASE("laser parameters are validated") {
    auto l = d2_laser();
    l.detuning = +1e8;
    CHECK_THROWS_AS(RecoolingModel(mg24_ion(), l), ValidationError);
    l = d2_laser();
    l.projection = 1.5;
    CHECK_THROWS_AS(RecoolingModel(mg24_ion(), l), ValidationError);
    CHECK_THROWS_AS(laser_from_json(nlohmann::json{{"wavelength_m", 280e-9}}), ParseError);
  }

  TEST_CASE("closed-form phase average matches adaptive quadrature") {
    const auto l = d2_laser();
    const RecoolingModel model(mg24_ion(), l);
    using boost::math::quadrature::gauss_kronrod;
    for (double e : {0.0, 1e-26, 1e-24, 1e-22, 5e-22, 1e-20}) {
      CAPTURE(e);
      const double v0 = std::sqrt(2 * e / model.ion().mass);
      auto rate = [&](double ph) { return l.linewidth * rho_ee(l, v0 * std::sin(ph)); };
      auto power = [&](double ph) {
        const double v = v0 * std::sin(ph);
        const double r = l.linewidth * rho_ee(l, v);
        return constants::hbar * l.wavenumber() * l.projection * v * r +
               model.recoil_energy() * (l.projection * l.projection + 1.0 / 3.0) * r;
      };
      const double r_ref = gauss_kronrod<double, 61>::integrate(rate, 0.0, two_pi, 25, 1e-14) / two_pi;
      const double p_ref = gauss_kronrod<double, 61>::integrate(power, 0.0, two_pi, 25, 1e-14) / two_pi;
      CHECK(model.scattering_rate(e) == doctest::Approx(r_ref).epsilon(1e-10));
      CHECK(model.energy_rate(e) == doctest::Approx(p_ref).epsilon(1e-9));
    }
  }

  TEST_CASE("steady state balances cooling and recoil") {
    const RecoolingModel model(mg24_ion(), d2_laser());
    const double e = model.steady_state_energy();
    CHECK(model.energy_rate(0.5 * e) > 0);
    CHECK(model.energy_rate(2.0 * e) < 0);
    CHECK(std::abs(model.energy_rate(e)) <= 1e-9 * std::abs(model.energy_rate(2.0 * e)));
  }

  TEST_CASE("energy relaxes at the linearized Doppler rate") {
    const auto l = d2_laser();
    const RecoolingModel model(mg24_ion(), l);
    // Independent route: damping from the slope of the single-beam force
    // hbar k cos * Gamma * rho_ee(v) at v = 0; <v^2> = E/m, so 1/tau = -F'/m.
    const double hk = constants::hbar * l.wavenumber() * l.projection;
    const double dv = 1e-3;
    const double slope = hk * l.linewidth * (rho_ee(l, dv) - rho_ee(l, -dv)) / (2 * dv);
    const double rate = -slope / model.ion().mass;
    REQUIRE(rate > 0);

    const double e_ss = model.steady_state_energy();
    const double e0 = 3.0 * e_ss;
    const std::vector<double> t{1.0 / rate, 2.0 / rate};
    const auto e = model.energy_trajectory(e0, t);
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double measured = -std::log((e[k] - e_ss) / (e0 - e_ss)) / t[k];
      CHECK(measured == doctest::Approx(rate).epsilon(0.05));
    }
  }

  TEST_CASE("already cold: flat at the cold scattering rate") {
    const RecoolingModel model(mg24_ion(), d2_laser());
    const auto c = recooling_curve(model, model.steady_state_energy(), kAxial, 10e-6, 50);
    const double cold = model.laser().detection_efficiency * model.cold_scattering_rate() * 10e-6;
    for (double n : c.counts) CHECK(n == doctest::Approx(cold).epsilon(0.01));
  }

  TEST_CASE("energy falls monotonically; fluorescence rises where rho_ee is concave") {
    // rho_ee(x) ~ 1 / (1 + s0 + x^2) is concave at the laser detuning only for
    // |delta| <= Gamma sqrt(1 + s0) / (2 sqrt 3). There any velocity spread
    // lowers the mean rate, so fluorescence rises as the ion cools.
    auto near = d2_laser();
    near.detuning = -0.3 * near.linewidth;
    for (const auto& laser : {d2_laser(), near}) {
      const RecoolingModel model(mg24_ion(), laser);
      const bool concave = -laser.detuning <= laser.linewidth * std::sqrt((1 + laser.saturation) / 12.0);
      for (double e0 : {1e-23, 5e-22, 1e-20}) {
        CAPTURE(e0);
        CAPTURE(laser.detuning);
        const double bin = e0 < 1e-22 ? 10e-6 : (e0 < 1e-21 ? 200e-6 : 20e-3);
        const auto c = recooling_curve(model, e0, kAxial, bin, 100);
        // Tolerance: bins are differences of a cumulative integral at 1e-12.
        if (concave || e0 > 1e-22)
          for (std::size_t k = 1; k < c.counts.size(); ++k) CHECK(c.counts[k] >= c.counts[k - 1] * (1 - 1e-9));
        std::vector<double> t;
        for (int k = 1; k <= 100; ++k) t.push_back(k * bin);
        const auto e = model.energy_trajectory(e0, t);
        CHECK(e.front() <= e0);
        // Tolerance: integration error on a state scaled by e0.
        for (std::size_t k = 1; k < e.size(); ++k) CHECK(e[k] <= e[k - 1] + 1e-10 * e0);
      }
    }
  }

  TEST_CASE("at delta = -Gamma/2 a warm ion outshines a cold one") {
    const RecoolingModel model(mg24_ion(), d2_laser());
    // Small Doppler spread (k v0 << Gamma) samples the convex flank.
    CHECK(model.scattering_rate(model.steady_state_energy()) > model.cold_scattering_rate());
    CHECK(model.scattering_rate(1e-20) < model.cold_scattering_rate());
  }

  TEST_CASE("photon budget covers the energy removed") {
    auto l = d2_laser();
    l.detection_efficiency = 1.0;
    const RecoolingModel model(mg24_ion(), l);
    const double e0 = 5e-22;
    const auto c = recooling_curve(model, e0, kAxial, 50e-6, 400);
    // Transient: bins until the rate is within 1% of the plateau.
    const double plateau = c.counts.back();
    double photons = 0;
    std::size_t k = 0;
    for (; k < c.counts.size() && c.counts[k] < 0.99 * plateau; ++k) photons += c.counts[k];
    REQUIRE(k < c.counts.size());
    const double bound = e0 / (constants::hbar * -l.detuning + model.recoil_energy());
    MESSAGE("photons over the transient: " << photons << ", energy bound " << bound);
    CHECK(photons >= 0.8 * bound);
  }
}

TEST_SUITE("recooling fit") {
  TEST_CASE("noiseless curves invert across three decades") {
    const RecoolingModel model(mg24_ion(), d2_laser());
    for (auto [e0, bin] : {std::pair{1e-23, 2e-6}, std::pair{1e-22, 40e-6}, std::pair{1e-21, 2e-3},
                           std::pair{1e-20, 40e-3}}) {
      CAPTURE(e0);
      const auto c = recooling_curve(model, e0, kAxial, bin, 100);
      const auto fit = fit_recooling(c, model);
      CHECK(fit.unimodal);
      CHECK(fit.energy == doctest::Approx(e0).epsilon(0.005));
      const auto scaled = fit_recooling(c, model, {.fit_rate_scale = true});
      CHECK(scaled.energy == doctest::Approx(e0).epsilon(0.005));
      CHECK(scaled.rate_scale == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  TEST_CASE("a flat curve fits at or below the cold limit") {
    const RecoolingModel model(mg24_ion(), d2_laser());
    const auto c = recooling_curve(model, 0.0, kAxial, 100e-6, 40);
    CHECK(fit_recooling(c, model).energy <= model.steady_state_energy());
  }

  TEST_CASE("Poisson replicas: small bias and unit pulls") {
    auto l = d2_laser();
    const double e0 = 5e-22, bin = 200e-6;
    const int bins = 100;
    l.detection_efficiency = 1.0;
    l.detection_efficiency = 1e4 / total(RecoolingModel(mg24_ion(), l).expected_counts(e0, bin, bins));
    const RecoolingModel model(mg24_ion(), l);
    const auto expected = recooling_curve(model, e0, kAxial, bin, bins);
    CHECK(total(expected.counts) == doctest::Approx(1e4).epsilon(1e-9));

    const int replicas = 200;
    double sum = 0, sum_pull = 0, sum_pull2 = 0;
    for (int r = 0; r < replicas; ++r) {
      const auto fit = fit_recooling(poisson_sample(expected, 1000 + static_cast<std::uint64_t>(r)), model);
      const double pull = (fit.energy - e0) / fit.energy_sigma;
      sum += fit.energy;
      sum_pull += pull;
      sum_pull2 += pull * pull;
    }
    const double bias = sum / replicas / e0 - 1.0;
    const double mean_pull = sum_pull / replicas;
    const double pull_sd = std::sqrt(sum_pull2 / replicas - mean_pull * mean_pull);
    MESSAGE("bias " << bias << ", pull sd " << pull_sd);
    CHECK(std::abs(bias) <= 0.05);
    CHECK(pull_sd >= 0.8);
    CHECK(pull_sd <= 1.2);
  }

  TEST_CASE("short or truncated curves are rejected") {
    const RecoolingModel model(mg24_ion(), d2_laser());
    CHECK_THROWS_AS(fit_recooling(recooling_curve(model, 5e-22, kAxial, 200e-6, 8), model), ValidationError);
    CHECK_THROWS_AS(fit_recooling(recooling_curve(model, 5e-22, kAxial, 20e-6, 100), model), ValidationError);
  }

  TEST_CASE("curve CSV round trip") {
    const RecoolingModel model(mg24_ion(), d2_laser());
    const auto c = recooling_curve(model, 5e-22, kAxial, 200e-6, 20);
    std::stringstream ss;
    write_curve_csv(c, ss);
    const auto back = read_curve_csv(ss);
    CHECK(back.counts == c.counts);
    CHECK(back.times == c.times);
    CHECK(back.bin_width == doctest::Approx(c.bin_width).epsilon(1e-15));
    std::istringstream bad("t_seconds,counts\n0,1\n1e-4,x\n");
    CHECK_THROWS_AS(read_curve_csv(bad), ParseError);
    std::istringstream backwards("t_seconds,counts\n1,1\n0,1\n");
    CHECK_THROWS_AS(read_curve_csv(backwards), ParseError);
  }
}

TEST_SUITE("heating rate") {
  TEST_CASE("slope of hbar omega x 2.16e4 /s gives 1e-10 (V/m)^2/Hz") {
    const double rate = quanta_rate_from_field_noise({1e-10, kAxial}, mg24_ion());
    const double slope = constants::hbar * kAxial * rate;
    std::vector<DelayPoint> series;
    for (double t : {0.0, 5.0, 10.0, 20.0, 40.0}) series.push_back({t, 2e-26 + slope * t, 0.0});
    const auto h = heating_rate_from_delays(series, mg24_ion(), kAxial);
    CHECK(h.field_psd == doctest::Approx(1e-10).epsilon(0.01));
    CHECK(h.quanta_per_s == doctest::Approx(rate).epsilon(1e-9));
    CHECK_FALSE(h.inconsistent);
  }

  TEST_CASE("constant energy: zero slope within its uncertainty") {
    std::vector<DelayPoint> series{{0, 1e-22, 1e-24}, {1, 1.01e-22, 1e-24}, {2, 0.99e-22, 1e-24}, {3, 1e-22, 1e-24}};
    const auto h = heating_rate_from_delays(series, mg24_ion(), kAxial);
    CHECK(std::abs(h.energy_rate) <= 2 * h.energy_rate_sigma);
    CHECK(std::abs(h.field_psd) <= 2 * h.field_psd_sigma);
  }

  TEST_CASE("doubling delays halves the slope") {
    std::vector<DelayPoint> a{{0.0, 1e-22, 2e-24}, {1.0, 3.1e-22, 3e-24}, {2.5, 5.9e-22, 5e-24}, {4.0, 9.2e-22, 7e-24}};
    auto b = a;
    for (auto& p : b) p.delay *= 2;
    const auto ha = heating_rate_from_delays(a, mg24_ion(), kAxial);
    const auto hb = heating_rate_from_delays(b, mg24_ion(), kAxial);
    CHECK(hb.energy_rate == doctest::Approx(ha.energy_rate / 2).epsilon(1e-9));
  }

  TEST_CASE("falling energy is flagged") {
    std::vector<DelayPoint> s{{0, 5e-22, 1e-24}, {1, 4e-22, 1e-24}, {2, 3e-22, 1e-24}};
    CHECK(heating_rate_from_delays(s, mg24_ion(), kAxial).inconsistent);
    CHECK_THROWS_AS(heating_rate_from_delays(std::span(s).first(2), mg24_ion(), kAxial), ValidationError);
  }

  TEST_CASE("end to end: simulated heating is recovered from Poisson recooling curves") {
    auto l = d2_laser();
    const double s_e = 1e-10, bin = 400e-6;
    const int bins = 100;
    const RecoolingModel probe(mg24_ion(), l);
    const double e_start = probe.steady_state_energy();
    const double slope = constants::hbar * kAxial * quanta_rate_from_field_noise({s_e, kAxial}, mg24_ion());
    std::vector<DelayPoint> series;
    std::uint64_t seed = 7;
    for (double delay : {5.0, 10.0, 20.0, 30.0, 40.0}) {
      const double e0 = e_start + slope * delay;
      l.detection_efficiency = 1.0;
      l.detection_efficiency = 1e5 / total(RecoolingModel(mg24_ion(), l).expected_counts(e0, bin, bins));
      const RecoolingModel model(mg24_ion(), l);
      const auto fit = fit_recooling(poisson_sample(recooling_curve(model, e0, kAxial, bin, bins), seed++), model);
      series.push_back({delay, fit.energy, fit.energy_sigma});
    }
    const auto h = heating_rate_from_delays(series, mg24_ion(), kAxial);
    MESSAGE("recovered S_E " << h.field_psd << " +- " << h.field_psd_sigma);
    CHECK(h.field_psd == doctest::Approx(s_e).epsilon(0.10));
  }
}
