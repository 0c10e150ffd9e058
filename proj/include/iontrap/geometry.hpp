#pragma once

#include "iontrap/polygon.hpp"
#include "iontrap/units.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace iontrap {

enum class ElectrodeRole { RF, DC, Ground };

std::string_view to_string(ElectrodeRole role);
ElectrodeRole parse_role(std::string_view text);

struct Electrode {
  std::string name;
  std::vector<Polygon> polygons;
  double plane_z = 0.0;
  ElectrodeRole role = ElectrodeRole::DC;
};

struct Box3 {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  Vec3 size() const { return hi - lo; }
};

/// Validated, immutable set of planar electrodes.
///
/// Metadata is free-form JSON; keys the toolkit itself reads:
///   kind          "surface" | "two-layer"  (surface layouts must have one plane)
///   gap_m         inter-electrode gap, used by the gapless-plane backend
///   gap_model     "slot" | "split": gap boundary condition of that backend
///   open_boundary edges on the layout bounding box extend to infinity in the
///                 gapless-plane backend (a fully tiled plane)
///   trap_axis     [x, y, z] direction of the linear trap axis (default +x)
///   zones         { name: [x, y] } named trap zones on the axis
///   bem_focus     [x, y, radius] disc where BEM panels stay fine
///   length_scale_m typical ion-electrode distance (search and step scale)
class ElectrodeLayout {
 public:
  /// Throws ValidationError naming the offending electrode.
  ElectrodeLayout(std::vector<Electrode> electrodes, std::vector<double> planes,
                  nlohmann::json metadata = nlohmann::json::object());

  const std::vector<Electrode>& electrodes() const noexcept { return electrodes_; }
  const std::vector<double>& planes() const noexcept { return planes_; }
  const Box3& extent() const noexcept { return extent_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  std::size_t size() const noexcept { return electrodes_.size(); }
  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws ValidationError for unknown names.
  std::size_t index_of(std::string_view name) const;
  const Electrode& electrode(std::string_view name) const { return electrodes_[index_of(name)]; }

  double gap() const;
  bool open_boundary() const;
  Vec3 trap_axis() const;
  std::optional<Vec2> zone(std::string_view name) const;

 private:
  std::vector<Electrode> electrodes_;
  std::vector<double> planes_;
  Box3 extent_;
  nlohmann::json metadata_;
};

/// Parses and validates a geometry document.
ElectrodeLayout load_layout(std::string_view text);
ElectrodeLayout load_layout_file(const std::string& path);
std::string serialize_layout(const ElectrodeLayout& layout);

/// Five-wire single-plane trap: centre strip E_CTR, RF rails RF_N/RF_S and two
/// rows of segmented control electrodes. Coordinates: x along the trap axis
/// (load zone at x = 0), y across it, electrodes in z = 0.
struct SurfaceTrapParams {
  double rf_rail_width = 60e-6;
  double center_width = 36e-6;
  double gap = 4e-6;
  /// Axial lengths of L1, L2, L3, E1, E2, E3; the F zone mirrors the E zone.
  std::vector<double> control_segment_lengths{100e-6, 100e-6, 100e-6, 100e-6, 100e-6, 100e-6};
  double load_to_experiment_distance = 371e-6;
  double outer_electrode_width = 150e-6;
  int fill_segments = 1;       // per side between adjacent zones
  int end_segments = 5;        // per side beyond the outer zones
  double end_segment_length = 100e-6;
  /// Half-length of the structure along the axis.
  double extent = 1.2e-3;
  /// Optional arm-end taper: over the last `taper_length` the transverse
  /// widths shrink linearly to `taper_scale`. Disabled when taper_length = 0.
  double taper_length = 0.0;
  double taper_scale = 1.0;

  void validate() const;
};

ElectrodeLayout builtin_surface_trap(const SurfaceTrapParams& params = {});

/// Two parallel electrode planes (z = 0 and z = plane_separation) with a slot.
/// Bottom plane: C1, C2, C3 on the +y side, RF_A on the -y side; top plane
/// mirrors it diagonally (C1p, C2p, C3p on -y, RF_B on +y).
struct TwoLayerTrapParams {
  double plane_separation = 200e-6;
  double slot_width = 140e-6;
  double center_length = 200e-6;   // C2
  double endcap_length = 400e-6;   // C1, C3
  double electrode_depth = 500e-6; // transverse size away from the slot
  double gap = 6e-6;

  void validate() const;
};

ElectrodeLayout builtin_two_layer_trap(const TwoLayerTrapParams& params = {});

}  // namespace iontrap
