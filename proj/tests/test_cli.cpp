#include "doctest.h"

#include "cli.hpp"
#include "plot.hpp"

#include "iontrap/heating.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace iontrap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("iontrap_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

bool one_error_line(const std::string& err) {
  return err.rfind("error: ", 0) == 0 && err.find('\n') == err.size() - 1;
}

plot::Grid sample(int n, double lo, double hi, double (*f)(double, double)) {
  plot::Grid g{n, n, lo, hi, lo, hi, {}};
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g.values.push_back(f(g.x(i), g.y(j)));
  return g;
}

}  // namespace

TEST_SUITE("marching squares") {
  TEST_CASE("iso-line of r^2 is a closed circle") {
    const auto g = sample(101, -1.0, 1.0, [](double x, double y) { return x * x + y * y; });
    // Off the grid values, so every endpoint is an interpolated edge point.
    const double r = 0.5037;
    const auto segs = plot::contour(g, r * r);
    REQUIRE(!segs.empty());
    double length = 0;
    std::map<std::pair<long long, long long>, int> ends;
    auto key = [](double x, double y) { return std::make_pair(std::llround(x * 1e9), std::llround(y * 1e9)); };
    for (const auto& s : segs) {
      // Linear interpolation of a quadratic: error ~ h^2 / (8 r).
      CHECK(std::hypot(s.xa, s.ya) == doctest::Approx(r).epsilon(1e-3));
      CHECK(std::hypot(s.xb, s.yb) == doctest::Approx(r).epsilon(1e-3));
      length += std::hypot(s.xb - s.xa, s.yb - s.ya);
      ++ends[key(s.xa, s.ya)];
      ++ends[key(s.xb, s.yb)];
    }
    CHECK(length == doctest::Approx(2 * 3.141592653589793 * r).epsilon(1e-3));
    for (const auto& [k, count] : ends) CHECK(count == 2);
    // On-vertex level: no zero-length segments.
    for (const auto& s : plot::contour(g, 0.25)) CHECK(std::hypot(s.xb - s.xa, s.yb - s.ya) > 0);
  }

  TEST_CASE("levels outside the data give nothing") {
    const auto g = sample(11, 0.0, 1.0, [](double x, double y) { return x + y; });
    CHECK(plot::contour(g, -1.0).empty());
    CHECK(plot::contour(g, 3.0).empty());
    CHECK(plot::contour(g, 1.0).size() >= 10);
  }

  TEST_CASE("cells touching NaN are skipped") {
    auto g = sample(21, -1.0, 1.0, [](double x, double) { return x; });
    const auto full = plot::contour(g, 0.05);
    g.values[10 * 21 + 10] = std::nan("");
    const auto holed = plot::contour(g, 0.05);
    CHECK(holed.size() == full.size() - 2);
    for (const auto& s : holed) CHECK(std::isfinite(s.xa + s.ya + s.xb + s.yb));
  }

  TEST_CASE("saddle cells split by the centre value") {
    // Corners (0,0) and (1,1) above, the other two below.
    plot::Grid g{2, 2, 0, 1, 0, 1, {1.0, -1.0, -1.0, 1.2}};
    auto segs = plot::contour(g, 0.0);
    REQUIRE(segs.size() == 2);
    // Centre above: the two low corners are cut off, one segment each.
    for (const auto& s : segs) {
      const double mx = 0.5 * (s.xa + s.xb), my = 0.5 * (s.ya + s.yb);
      CHECK(std::abs(mx - my) > 0.3);
    }
    g.values = {1.0, -1.0, -1.2, 1.0};
    segs = plot::contour(g, 0.0);
    REQUIRE(segs.size() == 2);
    for (const auto& s : segs) {
      const double mx = 0.5 * (s.xa + s.xb), my = 0.5 * (s.ya + s.yb);
      CHECK(std::abs(mx + my - 1.0) > 0.3);
    }
  }
}

TEST_SUITE("command line") {
  TEST_CASE("convert: 1e-10 (V/m)^2/Hz at 1.125 MHz") {
    const auto r = run({"convert", "--se", "1e-10", "--freq-hz", "1.125e6", "--ion", "Mg24"});
    CHECK(r.code == 0);
    CHECK(r.out == "2.16e4 quanta/s\n");
    const auto j = nlohmann::json::parse(run({"convert", "--se", "1e-10", "--freq-mhz", "1.125", "--json"}).out);
    CHECK(j["quanta_per_s"].get<double>() == doctest::Approx(2.16e4).epsilon(0.01));
    const auto back = nlohmann::json::parse(
        run({"convert", "--quanta", std::to_string(j["quanta_per_s"].get<double>()), "--freq-hz", "1.125e6", "--json"})
            .out);
    CHECK(back["S_E_V2m2Hz"].get<double>() == doctest::Approx(1e-10).epsilon(1e-6));
  }

  TEST_CASE("usage errors are one machine-parseable line") {
    for (const auto& args : std::vector<std::vector<std::string>>{
             {},
             {"convert", "--se", "1e-10"},
             {"convert", "--se", "x", "--freq-hz", "1e6"},
             {"convert", "--se", "1", "--quanta", "1", "--freq-hz", "1e6"},
             {"characterize"},
             {"--preset", "nope", "characterize"},
             {"--preset", "paper-surface", "--geometry", "a.json", "characterize"}}) {
      const auto r = run(args);
      CHECK(r.code == cli::kUsage);
      CHECK(one_error_line(r.err));
    }
  }

  TEST_CASE("missing and unreadable files exit 3") {
    auto r = run({"--geometry", "/nonexistent/trap.json", "characterize"});
    CHECK(r.code == cli::kIo);
    CHECK(one_error_line(r.err));
    r = run({"--out", scratch("io").string(), "recool", "--curves", "/nonexistent/c.csv"});
    CHECK(r.code == cli::kIo);
    const auto bad = scratch("badjson");
    fs::create_directories(bad);
    std::ofstream(bad / "v.json") << "{not json";
    r = run({"--preset", "paper-surface", "--voltages", (bad / "v.json").string(), "characterize"});
    CHECK(r.code == cli::kIo);
    CHECK(one_error_line(r.err));
  }

  TEST_CASE("all-zero voltages and zero RF: no confining minimum") {
    const auto r = run({"--geometry", IONTRAP_DATA_DIR "/surface_soi.json", "--out", scratch("zero").string(),
                        "characterize"});
    CHECK(r.code == cli::kNotConfining);
    CHECK(one_error_line(r.err));
    CHECK(r.err.find("no confining minimum") != std::string::npos);
  }

  TEST_CASE("characterize the surface preset: artifacts and determinism") {
    const auto a = scratch("char_a"), b = scratch("char_b");
    REQUIRE(run({"--preset", "paper-surface", "--out", a.string(), "characterize"}).code == 0);
    REQUIRE(run({"--preset", "paper-surface", "--out", b.string(), "characterize"}).code == 0);
    for (const char* f : {"characterization.json", "linecut_x.csv", "linecut_y.csv", "linecut_z.csv",
                          "pseudopotential_xz.svg", "layout.json"}) {
      CAPTURE(f);
      REQUIRE(fs::exists(a / f));
      CHECK(slurp(a / f) == slurp(b / f));
    }
    const auto j = read_json(a / "characterization.json");
    CHECK(j["modes"]["z"]["frequency_MHz"].get<double>() == doctest::Approx(1.125).epsilon(0.04));
    CHECK(j["depth_J"].get<double>() > 0);
    const std::string svg = slurp(a / "pseudopotential_xz.svg");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("<path") != std::string::npos);
    // The shipped geometry file is the preset layout.
    CHECK(read_json(a / "layout.json") == read_json(IONTRAP_DATA_DIR "/surface_soi.json"));
  }

  TEST_CASE("characterize the two-layer preset") {
    const auto dir = scratch("two_layer");
    const auto r = run({"--preset", "paper-twolayer", "--out", dir.string(), "characterize", "--grid", "16"});
    REQUIRE(r.code == 0);
    const auto j = read_json(dir / "characterization.json");
    CHECK(j["depth_J"].get<double>() > 0);
    CHECK(read_json(dir / "layout.json") == read_json(IONTRAP_DATA_DIR "/two_layer.json"));
  }

  TEST_CASE("solve then characterize reproduces the target frequency") {
    const auto dir = scratch("solve");
    auto r = run({"--preset", "paper-surface", "--out", dir.string(), "solve", "--target-freq-hz", "1.125e6", "--pos",
                  "load"});
    REQUIRE(r.code == 0);
    r = run({"--preset", "paper-surface", "--voltages", (dir / "voltages.json").string(), "--out",
             (dir / "check").string(), "characterize", "--no-depth"});
    REQUIRE(r.code == 0);
    const auto j = read_json(dir / "check" / "characterization.json");
    CHECK(j["modes"]["z"]["frequency_MHz"].get<double>() == doctest::Approx(1.125).epsilon(0.005));
    const auto target = read_json(dir / "voltages.json")["target_m"];
    double miss = 0;
    for (int k = 0; k < 3; ++k) miss = std::hypot(miss, j["minimum_m"][k].get<double>() - target[k].get<double>());
    CHECK(miss <= 0.1e-6);

    r = run({"--preset", "paper-surface", "--out", dir.string(), "solve", "--target-freq-mhz", "30", "--pos", "load"});
    CHECK(r.code == cli::kInfeasible);
    CHECK(one_error_line(r.err));
  }

  TEST_CASE("transport load to e-zone in 64 steps") {
    const auto dir = scratch("transport");
    const auto r = run({"--preset", "paper-surface", "--out", dir.string(), "transport", "--from", "load", "--to",
                        "e-zone", "--steps", "64"});
    REQUIRE(r.code == 0);
    std::ifstream csv(dir / "waveform.csv");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 65);  // header + 64 steps
    const auto j = read_json(dir / "transport_report.json");
    CHECK(j["all_pass"].get<bool>());
    CHECK(j["step_reports"].size() == 64);
    CHECK(fs::exists(dir / "transport_strip.svg"));
  }

  TEST_CASE("recool: simulated chain is seed-deterministic") {
    const auto a = scratch("recool_a"), b = scratch("recool_b"), c = scratch("recool_c");
    const std::vector<std::string> tail{"recool", "--simulate-se", "1e-10", "--delays-s", "5,10,20,40"};
    auto with = [&](const fs::path& dir, const char* seed) {
      std::vector<std::string> args{"--out", dir.string(), "--seed", seed};
      args.insert(args.end(), tail.begin(), tail.end());
      return run(args);
    };
    REQUIRE(with(a, "11").code == 0);
    REQUIRE(with(b, "11").code == 0);
    REQUIRE(with(c, "12").code == 0);
    CHECK(slurp(a / "recool.json") == slurp(b / "recool.json"));
    CHECK(slurp(a / "curve_00.csv") == slurp(b / "curve_00.csv"));
    CHECK(slurp(a / "curve_00.csv") != slurp(c / "curve_00.csv"));
    const auto j = read_json(a / "recool.json");
    for (const char* key : {"E0_J", "E0_sigma_J", "dEdt_J_per_s", "quanta_per_s", "S_E_V2m2Hz"}) CHECK(j.contains(key));
    CHECK(j["S_E_V2m2Hz"].get<double>() == doctest::Approx(1e-10).epsilon(0.10));

    // Refitting the written curves gives the same energies.
    const auto refit = scratch("recool_refit");
    const auto r = run({"--out", refit.string(), "recool", "--curves",
                        (a / "curve_00.csv").string() + "," + (a / "curve_01.csv").string()});
    REQUIRE(r.code == 0);
    const auto k = read_json(refit / "recool.json");
    CHECK(k["E0_J"][0].get<double>() == doctest::Approx(j["E0_J"][0].get<double>()).epsilon(1e-12));
    CHECK_FALSE(k.contains("S_E_V2m2Hz"));
  }
}
