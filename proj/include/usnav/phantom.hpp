#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "usnav/usrecon.hpp"
#include "usnav/volume.hpp"

namespace usnav {

struct IntensityModel {
  double mean = 0.0;
  double sigma = 0.0;
};

struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Vec3 radii = Vec3::Constant(15.0);
  IntensityModel intensity{180.0, 8.0};
};

/// Union of cylinders along a polyline, with spheres at interior joints.
struct Tube {
  std::vector<Vec3> path;
  double radius = 3.0;
  IntensityModel intensity{20.0, 5.0};
};

struct PhantomSpec {
  Vec3 bounds_min = Vec3::Constant(-40.0);
  Vec3 bounds_max = Vec3::Constant(40.0);
  std::vector<Ellipsoid> tumors;
  std::vector<Tube> vessels;
  IntensityModel background{60.0, 8.0};
  double speckle = 0.05;  // multiplicative noise sigma applied when rendering frames
  std::uint64_t seed = 42;
  std::optional<Ellipsoid> liver;  // outline for the preoperative model only

  void validate() const;
};

/// Sphere tumor of the given radius at the origin, one hypoechoic vessel
/// passing beside it, liver outline enclosing both.
PhantomSpec default_phantom(double tumor_radius_mm = 15.0);

struct GroundTruth {
  VoxelVolume volume;
  LabelMask tumor;
  LabelMask vessel;
  std::vector<Vec3> tumor_centers;
  double tumor_volume_mm3 = 0.0;   // analytic
  double vessel_volume_mm3 = 0.0;  // analytic, joints approximated
};

bool inside_ellipsoid(const Ellipsoid& e, const Vec3& p);
bool inside_tube(const Tube& t, const Vec3& p);

/// Voxel-centre inside tests against the analytic shapes. Where a tumor and a
/// vessel overlap, the tumor wins. Intensities are drawn from a generator
/// seeded with spec.seed and clamped to [0,255].
GroundTruth rasterize(const PhantomSpec& spec, double spacing);

/// Trilinear slice of the intensity volume on the image plane with
/// multiplicative speckle; pixels outside the volume are 0.
UsFrame render_frame(const GroundTruth& gt, const Pose& image_pose, int width, int height, double pixel_spacing,
                     double speckle, std::uint64_t seed);

/// n poses interpolated between start and end at uniform times
/// t0, t0 + duration/(n-1), ..., t0 + duration.
std::vector<Pose> sweep_script(const Pose& start, const Pose& end, int n, double duration_s, double t0_s = 0.0);

void save_phantom_spec(const PhantomSpec& spec, const std::string& path);
PhantomSpec load_phantom_spec(const std::string& path);

}  // namespace usnav
