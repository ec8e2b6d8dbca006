#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace topodiff::montage {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;

/// Polar angle that maps to the rim of the unit disc in project_2d.
inline constexpr double kRimPolarAngle = 2.0943951023931957;  // 2*pi/3

/// Named electrodes on the unit sphere (x: right ear, y: nose, z: vertex)
/// with their planar projection.
struct ElectrodeLayout {
  std::string name;
  std::vector<std::string> labels;
  std::vector<Vec3> pos3d;
  std::vector<Vec2> pos2d;

  std::size_t size() const { return labels.size(); }
  /// Index of `label` (case-insensitive) or npos.
  std::size_t find(const std::string& label) const;
  std::size_t index_of(const std::string& label) const;  // throws DataError when absent

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// A visible/unseen channel split of a layout.
struct SrTask {
  std::string dataset;
  int factor = 0;
  std::vector<std::size_t> visible;  // layout indices, preset order
  std::vector<std::size_t> unseen;   // layout indices, layout order

  std::size_t c_lr() const { return visible.size(); }
  std::size_t c_unseen() const { return unseen.size(); }
  std::size_t c_hr() const { return visible.size() + unseen.size(); }
};

/// For each visible channel, the local (visible-order) indices of its
/// spatial neighbours, nearest first.
using NeighborTable = std::vector<std::vector<std::size_t>>;

std::string normalize_label(const std::string& label);

/// Directory holding coordinate assets. Honors TOPODIFF_ASSET_DIR.
std::string asset_dir();

/// Parses a `LABEL theta_deg phi_deg` coordinate table. The layout contains
/// every electrode in file order, already projected.
ElectrodeLayout load_coordinate_file(const std::string& path);

/// Builds a layout from labels and Cartesian positions, validating
/// uniqueness and unit norm. pos2d is filled by project_2d.
ElectrodeLayout make_layout(std::string name, std::vector<std::string> labels,
                            std::vector<Vec3> pos3d);

/// Named montage ("seed62", "tusz19", "physionet64", "synth32") or a path
/// to a coordinate file.
ElectrodeLayout load_layout(const std::string& asset_name);

/// Azimuthal-equidistant projection about the vertex; radius is the polar
/// angle divided by kRimPolarAngle.
ElectrodeLayout project_2d(ElectrodeLayout layout);

/// Montage name the presets of `dataset` are defined over.
std::string layout_for_dataset(const std::string& dataset);

/// Visible channel labels for a (dataset, factor) preset.
const std::vector<std::string>& preset_visible(const std::string& dataset, int factor);

SrTask subsample(const ElectrodeLayout& layout, const std::string& dataset, int factor);

/// Task from an explicit visible label list; unseen is the complement.
SrTask make_task(const ElectrodeLayout& layout, const std::vector<std::string>& visible_labels,
                 std::string dataset = "custom", int factor = 0);

double chord_distance(const Vec3& a, const Vec3& b);

NeighborTable spatial_knn(const SrTask& task, const ElectrodeLayout& layout, std::size_t n_s);

}  // namespace topodiff::montage
