#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "usnav/mesh.hpp"
#include "usnav/volume.hpp"

namespace usnav {

struct SeedSet {
  std::vector<Index3> inside;
  std::vector<Index3> outside;
};

/// Seeded region growing with competing inside/outside fronts.
///
/// Both classes grow breadth-first over 6-neighbours in lockstep, one
/// geodesic step per round. A candidate joins a class if
/// |intensity - class mean| <= tol, where the mean is the class's running
/// mean at the start of the round. A voxel reachable by both classes in the
/// same round goes to outside; a voxel claimed earlier by one class is never
/// taken by the other, so contested voxels end up with the class that is
/// fewer steps away. Holes are never labelled. Seed lists are sorted and
/// de-duplicated first, so the result does not depend on seed order.
///
/// Throws SEED_CONFLICT if the seed lists share a voxel, INVALID_ARGUMENT
/// for seeds out of bounds or on holes, EMPTY_SEGMENT if `inside` is empty.
LabelMask region_grow(const VoxelVolume& v, const SeedSet& seeds, double tol);

inline constexpr double kUnboundedTolerance = std::numeric_limits<double>::infinity();

struct ComponentInfo {
  std::size_t voxels = 0;
  double volume_mm3 = 0.0;
  Vec3 centroid = Vec3::Zero();
  std::size_t first_index = 0;  // lowest linear voxel index in the component
};

/// Connected components (connectivity 6 or 26), ordered by lowest voxel
/// index. `labels` receives 1-based component ids (0 = background).
std::vector<ComponentInfo> connected_components(const LabelMask& m, int connectivity,
                                                std::vector<int>* labels = nullptr);

/// Plug-in slot for vessel (or any) segmentation. Implementations must return
/// a mask on the input volume's grid.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::string name() const = 0;
  virtual LabelMask segment(const VoxelVolume& v) const = 0;
};

struct VesselParams {
  double threshold = 35.0;           // intensity units; hypoechoic means <= threshold
  double min_component_mm3 = 50.0;
};

/// Hypoechoic threshold plus 26-connected minimum-volume filter.
class ThresholdVesselSegmenter final : public Segmenter {
 public:
  explicit ThresholdVesselSegmenter(VesselParams p = {}) : params_(p) {}
  std::string name() const override { return "threshold-baseline"; }
  LabelMask segment(const VoxelVolume& v) const override;

 private:
  VesselParams params_;
};

LabelMask vessel_baseline(const VoxelVolume& v, const VesselParams& params);

/// Runs any segmenter and checks the result lies on the input grid.
LabelMask run_segmenter(const Segmenter& s, const VoxelVolume& v, LabelKind kind);

/// Exact signed Euclidean distance (mm) to the mask boundary, negative
/// inside. For an outside voxel the value is the distance to the nearest
/// inside voxel centre minus half a voxel; for an inside voxel it is minus
/// (distance to the nearest outside voxel centre minus half a voxel), where
/// everything beyond the grid counts as outside. Computed with the separable
/// lower-envelope squared EDT (Felzenszwalb & Huttenlocher).
DistanceField distance_field(const LabelMask& m);

struct MarginResult {
  LabelMask mask;
  bool clipped = false;  // margin shell would extend past the grid
};

inline constexpr double kMarginPresetsMm[] = {5.0, 7.0, 10.0};

/// MARGIN = the mask plus every voxel whose centre lies within margin_mm of a
/// mask voxel centre.
MarginResult expand_margin(const LabelMask& m, double margin_mm);
MarginResult expand_margin(const LabelMask& m, const DistanceField& sdf, double margin_mm);

struct SurfaceOptions {
  int smoothing_iterations = 50;  // Taubin lambda/mu passes; 0 keeps the raw isosurface
  double lambda = 0.5;
  double mu = -0.53;
};

/// Marching-tetrahedra isosurface at 0.5 of the binary mask (grid padded
/// with background, so the result is always closed), followed by Taubin
/// smoothing. Vertices in mm.
SurfaceMesh extract_surface(const LabelMask& m, const SurfaceOptions& opts = {});

Vec3 centroid(const LabelMask& m);

enum class EditOp { ADD, ERASE };

/// Sets or clears every voxel whose centre lies within the brush sphere.
LabelMask manual_edit(const LabelMask& m, EditOp op, const Vec3& center_mm, double radius_mm);

double dice(const LabelMask& a, const LabelMask& b);

}  // namespace usnav
