#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "usnav/geometry.hpp"

namespace usnav {

using Index3 = std::array<int, 3>;

/// Regular isotropic grid. `origin` is the centre of voxel (0,0,0); voxel
/// (i,j,k) is centred at origin + spacing·(i,j,k). Storage is x-fastest.
struct GridGeometry {
  Vec3 origin = Vec3::Zero();
  double spacing = 1.0;
  Index3 dims{0, 0, 0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  std::size_t index(const Index3& ijk) const { return index(ijk[0], ijk[1], ijk[2]); }
  Index3 ijk(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }
  bool contains(const Index3& ijk) const { return contains(ijk[0], ijk[1], ijk[2]); }
  Vec3 center(int i, int j, int k) const { return origin + spacing * Vec3(i, j, k); }
  Vec3 center(const Index3& ijk) const { return center(ijk[0], ijk[1], ijk[2]); }
  Vec3 center(std::size_t idx) const { return center(ijk(idx)); }
  /// Continuous voxel coordinates of a point (voxel centres are integers).
  Vec3 to_voxel(const Vec3& p) const { return (p - origin) / spacing; }
  Index3 nearest(const Vec3& p) const;
  double voxel_volume() const { return spacing * spacing * spacing; }

  void validate() const;

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Reconstructed or rasterized intensity volume in the REFERENCE frame.
/// weight[i] counts contributions; weight 0 marks a hole.
struct VoxelVolume {
  GridGeometry geom;
  std::vector<float> scalars;
  std::vector<std::uint32_t> weight;

  static VoxelVolume empty(const GridGeometry& g);
  bool is_hole(std::size_t idx) const { return weight[idx] == 0; }
  /// Trilinear sample in mm; outside the grid returns `outside`.
  double sample(const Vec3& p, double outside = 0.0) const;

  friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;
};

enum class LabelKind { TUMOR, VESSEL, MARGIN, CLIP, LIVER };

std::string_view to_string(LabelKind k);
LabelKind label_kind_from_string(std::string_view s);

struct LabelMask {
  GridGeometry geom;
  std::vector<std::uint8_t> data;  // 0 or 1
  LabelKind kind = LabelKind::TUMOR;

  static LabelMask zeros(const GridGeometry& g, LabelKind kind);
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  double volume_mm3() const { return static_cast<double>(count()) * geom.voxel_volume(); }
  bool at(const Index3& ijk) const { return geom.contains(ijk) && data[geom.index(ijk)] != 0; }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// Signed distance (mm) sampled at voxel centres, negative inside.
struct DistanceField {
  GridGeometry geom;
  std::vector<double> values;

  double at(const Index3& ijk) const { return values[geom.index(ijk)]; }
  /// Trilinear interpolation with clamping to the grid.
  double sample(const Vec3& p) const;
};

// ---- volume file format -----------------------------------------------------
//
// `<stem>.json` sidecar (origin, spacing, dims, dtype, frame=REFERENCE,
// endianness=little, data file name, optional label kind / weight file) next
// to `<stem>.raw` holding little-endian scalars, x fastest. Paths passed to
// these functions name the sidecar.

void save_volume(const VoxelVolume& v, const std::string& sidecar_path);
VoxelVolume load_volume(const std::string& sidecar_path);

void save_mask(const LabelMask& m, const std::string& sidecar_path);
LabelMask load_mask(const std::string& sidecar_path);

/// Distance fields are stored as f32.
void save_field(const DistanceField& f, const std::string& sidecar_path);
DistanceField load_field(const std::string& sidecar_path);

GridGeometry read_volume_geometry(const std::string& sidecar_path);

}  // namespace usnav
