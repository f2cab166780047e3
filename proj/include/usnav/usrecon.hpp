#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "usnav/geometry.hpp"
#include "usnav/stream.hpp"
#include "usnav/tracking.hpp"
#include "usnav/volume.hpp"

namespace usnav {

/// One B-mode image. Pixel (u,v) (column u, row v) sits at
/// (u·du, v·dv, 0) in the IMAGE frame.
struct UsFrame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
  double du = 0.5;
  double dv = 0.5;
  Pose image_pose;  // IMAGE in REFERENCE
  double timestamp = 0.0;

  std::uint8_t at(int u, int v) const { return pixels[static_cast<std::size_t>(v) * width + u]; }
  void validate() const;
};

struct Calibration {
  Pose image_to_sensor;
  Device sensor = Device::PROBE;
};

/// reference⁻¹ ∘ probe_sensor ∘ image_to_sensor. Throws FRAME_DROPPED if
/// either tracked pose is missing.
Pose frame_pose(const Pose& probe_sensor, const Pose& reference, const Calibration& cal);

inline constexpr double kDefaultVoxelSpacingMm = 0.5;
inline constexpr std::size_t kDefaultVoxelBudget = std::size_t{512} * 512 * 512;
inline constexpr double kDefaultHoleFillRadiusMm = 1.5;

/// Forward (pixel-scatter) compounding: every pixel goes to its nearest voxel
/// and overlapping contributions are averaged. The grid origin is the minimum
/// corner of the mapped pixel bounding box. Sums are kept as integers, so the
/// result does not depend on frame order.
VoxelVolume compound(const std::vector<UsFrame>& frames, double spacing = kDefaultVoxelSpacingMm,
                     std::size_t voxel_budget = kDefaultVoxelBudget);

/// Inverse-distance-weighted fill of holes from the original filled voxels
/// within `max_radius_mm`. Filled voxels keep their values; filled holes get
/// weight 1.
VoxelVolume hole_fill(const VoxelVolume& v, double max_radius_mm = kDefaultHoleFillRadiusMm);

struct SweepAssembly {
  std::vector<UsFrame> frames;
  std::size_t dropped = 0;
};

/// Attaches REFERENCE-frame poses to raw images using the tracking log:
/// probe and reference are sampled at each image timestamp. Images whose
/// poses are missing (or outside the log) are dropped and counted.
SweepAssembly assemble_sweep(const std::vector<ImagePayload>& images, const TrackingLog& log,
                             const Calibration& cal);

// Frames file: concatenated IMAGE_FRAME wire frames.
void save_frames(const std::vector<ImagePayload>& images, const std::string& path);
std::vector<ImagePayload> load_frames(const std::string& path);

}  // namespace usnav
