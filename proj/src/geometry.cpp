#include "usnav/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "usnav/error.hpp"

namespace usnav {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::PoseMissing: return "POSE_MISSING";
    case Errc::NavigationLost: return "NAVIGATION_LOST";
    case Errc::Range: return "RANGE";
    case Errc::Parse: return "PARSE";
    case Errc::Order: return "ORDER";
    case Errc::Disconnected: return "DISCONNECTED";
    case Errc::FrameTooLarge: return "FRAME_TOO_LARGE";
    case Errc::FrameDropped: return "FRAME_DROPPED";
    case Errc::EmptySweep: return "EMPTY_SWEEP";
    case Errc::Budget: return "BUDGET";
    case Errc::SeedConflict: return "SEED_CONFLICT";
    case Errc::EmptySegment: return "EMPTY_SEGMENT";
    case Errc::InvalidPoint: return "INVALID_POINT";
    case Errc::UnknownDevice: return "UNKNOWN_DEVICE";
    case Errc::NotNavigating: return "NOT_NAVIGATING";
    case Errc::NoClips: return "NO_CLIPS";
    case Errc::EmptyCohort: return "EMPTY_COHORT";
    case Errc::InvalidArgument: return "INVALID_ARGUMENT";
    case Errc::Io: return "IO";
  }
  return "UNKNOWN";
}

std::string_view to_string(TrackStatus s) { return s == TrackStatus::OK ? "OK" : "MISSING"; }

std::string_view to_string(FrameId f) {
  switch (f) {
    case FrameId::WORLD: return "WORLD";
    case FrameId::REFERENCE: return "REFERENCE";
    case FrameId::PROBE_SENSOR: return "PROBE_SENSOR";
    case FrameId::SEALER_SENSOR: return "SEALER_SENSOR";
    case FrameId::POINTER_SENSOR: return "POINTER_SENSOR";
    case FrameId::IMAGE: return "IMAGE";
    case FrameId::PREOP_MODEL: return "PREOP_MODEL";
  }
  return "WORLD";
}

TrackStatus status_from_string(std::string_view s) {
  if (s == "OK") return TrackStatus::OK;
  if (s == "MISSING") return TrackStatus::MISSING;
  throw Error(Errc::Parse, "unknown tracking status '" + std::string(s) + "'");
}

FrameId frame_from_string(std::string_view s) {
  for (auto f : {FrameId::WORLD, FrameId::REFERENCE, FrameId::PROBE_SENSOR, FrameId::SEALER_SENSOR,
                 FrameId::POINTER_SENSOR, FrameId::IMAGE, FrameId::PREOP_MODEL}) {
    if (to_string(f) == s) return f;
  }
  throw Error(Errc::Parse, "unknown frame '" + std::string(s) + "'");
}

namespace {

Quat normalized_unit(const Quat& q) {
  const double n2 = q.squaredNorm();
  if (!(n2 > 0.0) || !std::isfinite(n2)) {
    throw Error(Errc::InvalidArgument, "quaternion must be finite and non-zero");
  }
  // Already unit to machine precision: keep the bits.
  if (std::abs(n2 - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon()) return q;
  return q.normalized();
}

void require_ok(const Pose& p, const char* what) {
  if (!p.ok()) throw Error(Errc::PoseMissing, what);
}

}  // namespace

Pose::Pose() : rotation_(Quat::Identity()), translation_(Vec3::Zero()) {}

Pose::Pose(const Quat& rotation, const Vec3& translation, double timestamp, TrackStatus status, FrameId frame)
    : rotation_(normalized_unit(rotation)),
      translation_(translation),
      timestamp_(timestamp),
      status_(status),
      frame_(frame) {}

Pose Pose::identity(double timestamp, FrameId frame) {
  return Pose(Quat::Identity(), Vec3::Zero(), timestamp, TrackStatus::OK, frame);
}

Pose Pose::from_translation(const Vec3& t, double timestamp, FrameId frame) {
  return Pose(Quat::Identity(), t, timestamp, TrackStatus::OK, frame);
}

Pose Pose::from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& t, double timestamp, FrameId frame) {
  return Pose(Quat(Eigen::AngleAxisd(angle_rad, axis.normalized())), t, timestamp, TrackStatus::OK, frame);
}

Pose Pose::missing(double timestamp, FrameId frame) {
  return Pose(Quat::Identity(), Vec3::Zero(), timestamp, TrackStatus::MISSING, frame);
}

Pose Pose::with_timestamp(double t) const {
  Pose p = *this;
  p.timestamp_ = t;
  return p;
}

Pose Pose::with_frame(FrameId f) const {
  Pose p = *this;
  p.frame_ = f;
  return p;
}

Pose Pose::with_status(TrackStatus s) const {
  Pose p = *this;
  p.status_ = s;
  return p;
}

Vec3 Pose::apply(const Vec3& p) const {
  require_ok(*this, "cannot apply a missing pose");
  return rotation_ * p + translation_;
}

bool operator==(const Pose& a, const Pose& b) {
  return a.rotation_.coeffs() == b.rotation_.coeffs() && a.translation_ == b.translation_ &&
         a.timestamp_ == b.timestamp_ && a.status_ == b.status_ && a.frame_ == b.frame_;
}

Pose compose(const Pose& a, const Pose& b) {
  require_ok(a, "compose: left pose missing");
  require_ok(b, "compose: right pose missing");
  Quat q = a.rotation() * b.rotation();
  q.normalize();
  return Pose(q, a.rotation() * b.translation() + a.translation(), std::max(a.timestamp(), b.timestamp()),
              TrackStatus::OK, a.frame());
}

Pose invert(const Pose& a) {
  require_ok(a, "invert: pose missing");
  const Quat qi = a.rotation().conjugate();
  return Pose(qi, -(qi * a.translation()), a.timestamp(), TrackStatus::OK, a.frame());
}

Pose express_in_reference(const Pose& instrument, const Pose& reference) {
  if (!reference.ok()) throw Error(Errc::NavigationLost, "reference sensor not tracked");
  require_ok(instrument, "instrument pose missing");
  return compose(invert(reference), instrument).with_frame(FrameId::REFERENCE);
}

Pose interpolate(const Pose& a, const Pose& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::Range, "interpolation fraction outside [0,1]");
  require_ok(a, "interpolate: first pose missing");
  require_ok(b, "interpolate: second pose missing");
  if (a.timestamp() > b.timestamp()) throw Error(Errc::Range, "interpolate: poses out of time order");
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  const Quat q = a.rotation().slerp(t, b.rotation());
  const Vec3 p = (1.0 - t) * a.translation() + t * b.translation();
  const double ts = a.timestamp() + t * (b.timestamp() - a.timestamp());
  return Pose(q, p, ts, TrackStatus::OK, a.frame());
}

Pose sample_at(std::span<const Pose> timeline, double t) {
  if (timeline.empty()) throw Error(Errc::Range, "empty pose timeline");
  const Pose& first = timeline.front();
  const Pose& last = timeline.back();
  if (t <= first.timestamp()) {
    if (first.timestamp() - t > kMaxExtrapolationS) throw Error(Errc::Range, "time precedes timeline");
    return first.with_timestamp(t);
  }
  if (t >= last.timestamp()) {
    if (t - last.timestamp() > kMaxExtrapolationS) throw Error(Errc::Range, "time exceeds timeline");
    return last.with_timestamp(t);
  }
  auto it = std::upper_bound(timeline.begin(), timeline.end(), t,
                             [](double v, const Pose& p) { return v < p.timestamp(); });
  const Pose& hi = *it;
  const Pose& lo = *(it - 1);
  if (lo.timestamp() == t) return lo;
  if (!lo.ok() || !hi.ok()) return Pose::missing(t, lo.frame());
  const double span = hi.timestamp() - lo.timestamp();
  return interpolate(lo, hi, (t - lo.timestamp()) / span).with_timestamp(t);
}

double pose_distance(const Pose& a, const Pose& b) {
  const double dt = (a.translation() - b.translation()).cwiseAbs().maxCoeff();
  const double dr = (a.rotation_matrix() - b.rotation_matrix()).cwiseAbs().maxCoeff();
  return std::max(dt, dr);
}

}  // namespace usnav
