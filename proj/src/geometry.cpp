#include "iontrap/geometry.hpp"

#include "iontrap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace iontrap {

namespace {

constexpr double kOverlapTolerance = 1e-18;  // m^2

using json = nlohmann::json;

}  // namespace

std::string_view to_string(ElectrodeRole role) {
  switch (role) {
    case ElectrodeRole::RF: return "RF";
    case ElectrodeRole::DC: return "DC";
    case ElectrodeRole::Ground: return "GROUND";
  }
  return "DC";
}

ElectrodeRole parse_role(std::string_view text) {
  if (text == "RF") return ElectrodeRole::RF;
  if (text == "DC") return ElectrodeRole::DC;
  if (text == "GROUND") return ElectrodeRole::Ground;
  throw ParseError("unknown electrode role '" + std::string(text) + "'");
}

ElectrodeLayout::ElectrodeLayout(std::vector<Electrode> electrodes, std::vector<double> planes,
                                 nlohmann::json metadata)
    : electrodes_(std::move(electrodes)), planes_(std::move(planes)), metadata_(std::move(metadata)) {
  if (!metadata_.is_object()) throw ValidationError("metadata", "must be an object");
  if (planes_.empty()) throw ValidationError("planes", "at least one plane is required");
  std::vector<double> sorted = planes_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError("planes", "plane heights must be distinct");
  if (metadata_.value("kind", std::string{}) == "surface" && planes_.size() != 1)
    throw ValidationError("planes", "a surface layout has exactly one plane");

  std::set<std::string> names;
  bool has_rf = false, has_dc = false;
  for (const auto& e : electrodes_) {
    if (e.name.empty()) throw ValidationError("", "electrode with empty name");
    if (!names.insert(e.name).second) throw ValidationError(e.name, "duplicate electrode name");
    if (std::find(planes_.begin(), planes_.end(), e.plane_z) == planes_.end())
      throw ValidationError(e.name, "plane_z is not one of the layout planes");
    if (e.polygons.empty()) throw ValidationError(e.name, "electrode has no polygons");
    for (const auto& p : e.polygons) {
      if (p.size() < 3) throw ValidationError(e.name, "polygon with fewer than 3 vertices");
      for (const auto& v : p)
        if (!v.allFinite()) throw ValidationError(e.name, "non-finite vertex");
      if (!polygon::is_simple(p)) throw ValidationError(e.name, "polygon is not simple");
    }
    has_rf |= e.role == ElectrodeRole::RF;
    has_dc |= e.role == ElectrodeRole::DC;
  }
  if (!has_rf) throw ValidationError("", "layout has no RF electrode");
  if (!has_dc) throw ValidationError("", "layout has no DC electrode");

  // Overlap check, pairwise over polygons sharing a plane.
  struct Item {
    std::size_t electrode;
    const Polygon* poly;
    Vec2 lo, hi;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < electrodes_.size(); ++i)
    for (const auto& p : electrodes_[i].polygons) {
      auto [lo, hi] = polygon::bounds(p);
      items.push_back({i, &p, lo, hi});
    }
  for (std::size_t a = 0; a < items.size(); ++a) {
    for (std::size_t b = a + 1; b < items.size(); ++b) {
      const auto& ia = items[a];
      const auto& ib = items[b];
      if (electrodes_[ia.electrode].plane_z != electrodes_[ib.electrode].plane_z) continue;
      if ((ia.lo.array() >= ib.hi.array()).any() || (ib.lo.array() >= ia.hi.array()).any()) continue;
      if (polygon::intersection_area(*ia.poly, *ib.poly) > kOverlapTolerance) {
        const auto& na = electrodes_[ia.electrode].name;
        const auto& nb = electrodes_[ib.electrode].name;
        throw ValidationError(na, na == nb ? "polygons overlap" : "overlaps electrode " + nb);
      }
    }
  }

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& e : electrodes_)
    for (const auto& p : e.polygons)
      for (const auto& v : p) {
        lo = lo.cwiseMin(Vec3(v.x(), v.y(), e.plane_z));
        hi = hi.cwiseMax(Vec3(v.x(), v.y(), e.plane_z));
      }
  extent_ = {lo, hi};
}

std::optional<std::size_t> ElectrodeLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < electrodes_.size(); ++i)
    if (electrodes_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ElectrodeLayout::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ValidationError(std::string(name), "unknown electrode");
}

double ElectrodeLayout::gap() const { return metadata_.value("gap_m", 0.0); }

bool ElectrodeLayout::open_boundary() const { return metadata_.value("open_boundary", false); }

Vec3 ElectrodeLayout::trap_axis() const {
  if (metadata_.contains("trap_axis")) {
    const auto& a = metadata_.at("trap_axis");
    Vec3 v(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
    if (v.norm() > 0) return v.normalized();
  }
  return Vec3::UnitX();
}

std::optional<Vec2> ElectrodeLayout::zone(std::string_view name) const {
  if (!metadata_.contains("zones")) return std::nullopt;
  const auto& zones = metadata_.at("zones");
  auto it = zones.find(std::string(name));
  if (it == zones.end()) return std::nullopt;
  return Vec2(it->at(0).get<double>(), it->at(1).get<double>());
}

ElectrodeLayout load_layout(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("geometry document: ") + e.what());
  }
  try {
    if (!doc.is_object()) throw ParseError("geometry document: top level must be an object");
    std::vector<double> planes = doc.at("planes").get<std::vector<double>>();
    std::vector<Electrode> electrodes;
    for (const auto& je : doc.at("electrodes")) {
      Electrode e;
      e.name = je.at("name").get<std::string>();
      e.role = parse_role(je.at("role").get<std::string>());
      e.plane_z = je.at("plane_z").get<double>();
      for (const auto& jp : je.at("polygons")) {
        Polygon poly;
        for (const auto& jv : jp) {
          if (jv.size() != 2) throw ParseError("electrode " + e.name + ": vertex must be [x, y]");
          poly.emplace_back(jv.at(0).get<double>(), jv.at(1).get<double>());
        }
        e.polygons.push_back(std::move(poly));
      }
      electrodes.push_back(std::move(e));
    }
    json metadata = doc.value("metadata", json::object());
    return ElectrodeLayout(std::move(electrodes), std::move(planes), std::move(metadata));
  } catch (const json::exception& e) {
    throw ParseError(std::string("geometry document: ") + e.what());
  }
}

ElectrodeLayout load_layout_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open geometry file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_layout(ss.str());
}

std::string serialize_layout(const ElectrodeLayout& layout) {
  json doc;
  doc["planes"] = layout.planes();
  json electrodes = json::array();
  for (const auto& e : layout.electrodes()) {
    json je;
    je["name"] = e.name;
    je["role"] = std::string(to_string(e.role));
    je["plane_z"] = e.plane_z;
    json polys = json::array();
    for (const auto& p : e.polygons) {
      json jp = json::array();
      for (const auto& v : p) jp.push_back({v.x(), v.y()});
      polys.push_back(std::move(jp));
    }
    je["polygons"] = std::move(polys);
    electrodes.push_back(std::move(je));
  }
  doc["electrodes"] = std::move(electrodes);
  doc["metadata"] = layout.metadata();
  return doc.dump(1);
}

// ---------------------------------------------------------------------------
// Surface trap

void SurfaceTrapParams::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) throw ValidationError(what, "must be > 0");
  };
  positive(rf_rail_width, "rf_rail_width");
  positive(center_width, "center_width");
  positive(gap, "gap");
  positive(load_to_experiment_distance, "load_to_experiment_distance");
  positive(outer_electrode_width, "outer_electrode_width");
  positive(end_segment_length, "end_segment_length");
  positive(extent, "extent");
  if (control_segment_lengths.size() != 6)
    throw ValidationError("control_segment_lengths", "expects 6 lengths (L1-L3, E1-E3)");
  for (double l : control_segment_lengths) {
    positive(l, "control_segment_lengths");
    if (gap >= l) throw ValidationError("gap", "must be smaller than every segment length");
  }
  if (gap >= rf_rail_width || gap >= center_width || gap >= outer_electrode_width ||
      gap >= end_segment_length)
    throw ValidationError("gap", "must be smaller than every electrode width");
  if (fill_segments < 1) throw ValidationError("fill_segments", "must be >= 1");
  if (end_segments < 1) throw ValidationError("end_segments", "must be >= 1");
  if (taper_length < 0 || taper_scale <= 0 || taper_scale > 1)
    throw ValidationError("taper", "taper_length >= 0 and 0 < taper_scale <= 1 required");
}

namespace {

// Piecewise-linear transverse profile scale factor along x.
struct TaperProfile {
  double extent, length, scale;
  double operator()(double x) const {
    if (length <= 0) return 1.0;
    double start = extent - length;
    double ax = std::abs(x);
    if (ax <= start) return 1.0;
    double t = std::min((ax - start) / length, 1.0);
    return 1.0 + t * (scale - 1.0);
  }
  std::vector<double> breakpoints() const {
    if (length <= 0) return {};
    return {-(extent - length), extent - length};
  }
};

// Band between two curves y = lo(x), y = hi(x) for x in [x1, x2], CCW.
Polygon band(double x1, double x2, const std::function<double(double)>& lo,
             const std::function<double(double)>& hi, const std::vector<double>& breaks) {
  std::vector<double> xs{x1};
  for (double b : breaks)
    if (b > x1 && b < x2) xs.push_back(b);
  xs.push_back(x2);
  Polygon p;
  for (double x : xs) p.emplace_back(x, lo(x));
  for (auto it = xs.rbegin(); it != xs.rend(); ++it) p.emplace_back(*it, hi(*it));
  // Collapse collinear duplicates produced by flat profiles.
  Polygon out;
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = p[(i + n - 1) % n];
    const Vec2& b = p[i];
    const Vec2& c = p[(i + 1) % n];
    double turn = (b - a).x() * (c - b).y() - (b - a).y() * (c - b).x();
    if (std::abs(turn) > 1e-30) out.push_back(b);
  }
  return out;
}

std::string two_digit(int k) {
  std::string s = std::to_string(k);
  return k < 10 ? "0" + s : s;
}

}  // namespace

ElectrodeLayout builtin_surface_trap(const SurfaceTrapParams& p) {
  p.validate();
  const auto& L = p.control_segment_lengths;
  const double D = p.load_to_experiment_distance;
  const double g = p.gap;

  // Segment boundaries along x (cell edges, gaps are cut out symmetrically).
  const double e0 = D - L[4] / 2 - L[3], e1 = D - L[4] / 2, e2 = D + L[4] / 2, e3 = D + L[4] / 2 + L[5];
  const double l0 = -L[1] / 2 - L[0], l1 = -L[1] / 2, l2 = L[1] / 2, l3 = L[1] / 2 + L[2];
  if (l3 >= e0) throw ValidationError("load_to_experiment_distance", "load and experiment zones overlap");
  const double last_regular = e3 + (p.end_segments - 1) * p.end_segment_length;
  if (p.extent <= last_regular + g)
    throw ValidationError("extent", "too small for the requested end segments");

  std::vector<double> pos{e0, e1, e2, e3};  // positive half, without fill/ends
  std::vector<double> edges;
  // Negative arm: mirror of the positive arm.
  std::vector<double> right;
  for (int k = 1; k < p.end_segments; ++k) right.push_back(e3 + k * p.end_segment_length);
  right.push_back(p.extent);
  std::vector<double> between;  // strictly between l3 and e0
  for (int k = 1; k < p.fill_segments; ++k) between.push_back(l3 + (e0 - l3) * k / p.fill_segments);

  for (auto it = right.rbegin(); it != right.rend(); ++it) edges.push_back(-*it);
  for (double x : {-e3, -e2, -e1, -e0}) edges.push_back(x);
  for (auto it = between.rbegin(); it != between.rend(); ++it) edges.push_back(-*it);
  for (double x : {l0, l1, l2, l3}) edges.push_back(x);
  for (double x : between) edges.push_back(x);
  for (double x : pos) edges.push_back(x);
  for (double x : right) edges.push_back(x);
  const int nseg = static_cast<int>(edges.size()) - 1;

  // Zone names on the north (+y) row, ascending x; the south row is numbered
  // in the opposite direction so that E3/E4, E2/E5 and E1/E6 face each other.
  const int f_first = p.end_segments;
  const int l_first = f_first + 3 + p.fill_segments;
  const int e_first = l_first + 3 + p.fill_segments;
  auto segment_name = [&](int k, bool north) -> std::string {
    auto zone = [&](int first, const char* prefix) -> std::optional<std::string> {
      int j = k - first;
      if (j < 0 || j > 2) return std::nullopt;
      int number = north ? j + 1 : 6 - j;
      return std::string(prefix) + std::to_string(number);
    };
    if (auto z = zone(f_first, "F")) return *z;
    if (auto z = zone(l_first, "L")) return *z;
    if (auto z = zone(e_first, "E")) return *z;
    return std::string(north ? "N" : "S") + two_digit(k);
  };

  TaperProfile taper{p.extent, p.taper_length, p.taper_scale};
  const auto breaks = taper.breakpoints();
  const double half_c = p.center_width / 2;
  const double rf_in = half_c + g;
  const double rf_out = rf_in + p.rf_rail_width;
  const double outer_in = rf_out + g;
  const double outer_out = outer_in + p.outer_electrode_width;

  auto scaled = [&](double y) { return [=](double x) { return y * taper(x); }; };
  auto fixed = [](double y) { return [=](double) { return y; }; };

  std::vector<Electrode> els;
  const double x_lo = -p.extent, x_hi = p.extent;
  els.push_back({"E_CTR", {band(x_lo, x_hi, scaled(-half_c), scaled(half_c), breaks)}, 0.0, ElectrodeRole::DC});
  els.push_back({"RF_N", {band(x_lo, x_hi, scaled(rf_in), scaled(rf_out), breaks)}, 0.0, ElectrodeRole::RF});
  els.push_back({"RF_S", {band(x_lo, x_hi, scaled(-rf_out), scaled(-rf_in), breaks)}, 0.0, ElectrodeRole::RF});
  for (bool north : {true, false}) {
    for (int k = 0; k < nseg; ++k) {
      double a = edges[k] + (k == 0 ? 0.0 : g / 2);
      double b = edges[k + 1] - (k == nseg - 1 ? 0.0 : g / 2);
      Polygon poly = north ? band(a, b, scaled(outer_in), fixed(outer_out), breaks)
                           : band(a, b, fixed(-outer_out), scaled(-outer_in), breaks);
      els.push_back({segment_name(k, north), {std::move(poly)}, 0.0, ElectrodeRole::DC});
    }
  }

  json meta;
  meta["kind"] = "surface";
  meta["description"] = "segmented five-wire surface-electrode trap, load zone at x = 0";
  meta["gap_m"] = g;
  meta["trap_axis"] = {1.0, 0.0, 0.0};
  meta["loaded_q"] = 90;
  meta["zones"] = {{"load", {0.0, 0.0}}, {"e-zone", {D, 0.0}}, {"f-zone", {-D, 0.0}}};
  meta["bem_focus"] = {0.0, 0.0, 200e-6};
  return ElectrodeLayout(std::move(els), {0.0}, std::move(meta));
}

// ---------------------------------------------------------------------------
// Two-layer trap

void TwoLayerTrapParams::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) throw ValidationError(what, "must be > 0");
  };
  positive(plane_separation, "plane_separation");
  positive(slot_width, "slot_width");
  positive(center_length, "center_length");
  positive(endcap_length, "endcap_length");
  positive(electrode_depth, "electrode_depth");
  positive(gap, "gap");
  if (gap >= center_length || gap >= endcap_length)
    throw ValidationError("gap", "must be smaller than every electrode length");
}

ElectrodeLayout builtin_two_layer_trap(const TwoLayerTrapParams& p) {
  p.validate();
  const double z0 = 0.0, z1 = p.plane_separation;
  const double s = p.slot_width / 2;
  const double c = p.center_length / 2;
  const double x_end = c + p.gap + p.endcap_length;
  auto rect = [](double x1, double x2, double y1, double y2) -> Polygon {
    return {{x1, y1}, {x2, y1}, {x2, y2}, {x1, y2}};
  };
  auto dc_row = [&](double y1, double y2, double z, const std::string& suffix) {
    return std::vector<Electrode>{
        {"C1" + suffix, {rect(-x_end, -c - p.gap, y1, y2)}, z, ElectrodeRole::DC},
        {"C2" + suffix, {rect(-c, c, y1, y2)}, z, ElectrodeRole::DC},
        {"C3" + suffix, {rect(c + p.gap, x_end, y1, y2)}, z, ElectrodeRole::DC},
    };
  };
  std::vector<Electrode> els;
  for (auto& e : dc_row(s, s + p.electrode_depth, z0, "")) els.push_back(std::move(e));
  els.push_back({"RF_A", {rect(-x_end, x_end, -s - p.electrode_depth, -s)}, z0, ElectrodeRole::RF});
  for (auto& e : dc_row(-s - p.electrode_depth, -s, z1, "p")) els.push_back(std::move(e));
  els.push_back({"RF_B", {rect(-x_end, x_end, s, s + p.electrode_depth)}, z1, ElectrodeRole::RF});

  json meta;
  meta["kind"] = "two-layer";
  meta["description"] = "two-layer slot trap, electrodes on planes z = 0 and z = plane separation";
  meta["gap_m"] = p.gap;
  meta["trap_axis"] = {1.0, 0.0, 0.0};
  meta["loaded_q"] = 372;
  meta["zones"] = {{"center", {0.0, 0.0}}};
  meta["bem_focus"] = {0.0, 0.0, p.plane_separation};
  return ElectrodeLayout(std::move(els), {z0, z1}, std::move(meta));
}

}  // namespace iontrap
