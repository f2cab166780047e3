#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <span>
#include <string_view>

namespace usnav {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

enum class TrackStatus { OK, MISSING };

enum class FrameId { WORLD, REFERENCE, PROBE_SENSOR, SEALER_SENSOR, POINTER_SENSOR, IMAGE, PREOP_MODEL };

std::string_view to_string(TrackStatus s);
std::string_view to_string(FrameId f);
TrackStatus status_from_string(std::string_view s);
FrameId frame_from_string(std::string_view s);

/// Timestamped rigid transform. Rotation is a unit quaternion (w,x,y,z),
/// right-handed, active; translation in mm; timestamp in seconds.
///
/// The quaternion is renormalized on construction unless it is already unit
/// to within a few ulps, so that re-constructing a pose from its own
/// components reproduces it bit for bit.
class Pose {
 public:
  Pose();
  Pose(const Quat& rotation, const Vec3& translation, double timestamp = 0.0,
       TrackStatus status = TrackStatus::OK, FrameId frame = FrameId::WORLD);

  static Pose identity(double timestamp = 0.0, FrameId frame = FrameId::WORLD);
  static Pose from_translation(const Vec3& t, double timestamp = 0.0, FrameId frame = FrameId::WORLD);
  static Pose from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& t = Vec3::Zero(),
                              double timestamp = 0.0, FrameId frame = FrameId::WORLD);
  static Pose missing(double timestamp, FrameId frame = FrameId::WORLD);

  const Quat& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  double timestamp() const { return timestamp_; }
  TrackStatus status() const { return status_; }
  FrameId frame() const { return frame_; }
  bool ok() const { return status_ == TrackStatus::OK; }

  Pose with_timestamp(double t) const;
  Pose with_frame(FrameId f) const;
  Pose with_status(TrackStatus s) const;

  /// Maps a point through this transform. Throws POSE_MISSING when not OK.
  Vec3 apply(const Vec3& p) const;
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }

  // Exact component-wise equality (used for bit-exact round-trip checks).
  friend bool operator==(const Pose& a, const Pose& b);

 private:
  Quat rotation_;
  Vec3 translation_;
  double timestamp_ = 0.0;
  TrackStatus status_ = TrackStatus::OK;
  FrameId frame_ = FrameId::WORLD;
};

/// a∘b: apply b first, then a. Result is labelled with a's frame.
Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& a);

/// Motion compensation: reference⁻¹ ∘ instrument, labelled REFERENCE.
/// Throws NAVIGATION_LOST if the reference is missing, POSE_MISSING if the
/// instrument is.
Pose express_in_reference(const Pose& instrument, const Pose& reference);

/// Slerp on rotation, lerp on translation and timestamp. t ∈ [0,1].
Pose interpolate(const Pose& a, const Pose& b, double t);

/// Longest gap allowed when holding the first/last sample of a timeline.
inline constexpr double kMaxExtrapolationS = 0.050;

/// Pose of a time-ordered timeline at time t, interpolated between the
/// bracketing samples. Queries outside the timeline by at most
/// kMaxExtrapolationS return the nearest endpoint; farther ones throw RANGE.
/// Bracketing samples that are MISSING yield a MISSING pose.
Pose sample_at(std::span<const Pose> timeline, double t);

/// Max absolute difference of translation and of rotation matrix entries.
double pose_distance(const Pose& a, const Pose& b);

}  // namespace usnav
