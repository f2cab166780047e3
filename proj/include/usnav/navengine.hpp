#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "usnav/error.hpp"
#include "usnav/mesh.hpp"
#include "usnav/registration.hpp"
#include "usnav/segment.hpp"
#include "usnav/stream.hpp"
#include "usnav/tracking.hpp"

namespace usnav {

enum class NavState { SETUP, NAVIGATING, LOST };
enum class Alert { CLEAR, NEAR_MARGIN, INSIDE_MARGIN };

std::string_view to_string(NavState s);
std::string_view to_string(Alert a);
NavState nav_state_from_string(std::string_view s);
Alert alert_from_string(std::string_view s);

inline constexpr double kDefaultTLostS = 0.5;
inline constexpr double kDefaultHysteresisMm = 2.0;
inline constexpr double kDefaultPublishRateHz = 30.0;

/// Margin alert with hysteresis.
///
/// Entering: INSIDE_MARGIN when d < margin, NEAR_MARGIN when
/// margin <= d <= margin + h. Leaving a state towards a milder one needs the
/// distance to clear that state's upper edge by h: INSIDE_MARGIN holds until
/// d >= margin + h, NEAR_MARGIN holds until d >= margin + 2h.
Alert check_alert(double d, double margin_mm, double hysteresis_mm = kDefaultHysteresisMm,
                  Alert previous = Alert::CLEAR);

/// Tumor geometry prepared for live queries: mask, signed distance field,
/// surface mesh and its AABB tree.
struct TumorModel {
  LabelMask mask;
  DistanceField sdf;
  SurfaceMesh mesh;
  MeshDistance index;

  static std::shared_ptr<const TumorModel> build(const LabelMask& mask, const SurfaceOptions& opts = {});
  /// Distance to the tumor surface mesh, negative when the point is inside
  /// the segmentation.
  double signed_distance(const Vec3& p) const;
};

struct NavConfig {
  double t_lost_s = kDefaultTLostS;
  double hysteresis_mm = kDefaultHysteresisMm;
  double margin_mm = 10.0;
  double publish_rate_hz = kDefaultPublishRateHz;
  std::vector<Device> devices{std::begin(kAllDevices), std::end(kAllDevices)};
  // Sensor-to-tip transforms; identity when absent.
  std::map<Device, Pose> tip_offsets;
};

struct ClipRecord {
  int id = 0;
  Vec3 position = Vec3::Zero();  // mm, REFERENCE
  double intraop_distance = 0.0; // signed mm to the tumor border at digitization
  double timestamp = 0.0;

  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

struct InstrumentView {
  Device device = Device::POINTER;
  Pose tip;  // REFERENCE
  std::optional<double> distance_mm;
};

struct SceneDelta {
  NavState state = NavState::SETUP;
  bool state_changed = false;
  Alert alert = Alert::CLEAR;
  bool alert_changed = false;
  std::optional<InstrumentView> instrument;  // the instrument this sample updated, if valid
};

struct MeshSlot {
  std::shared_ptr<const SurfaceMesh> mesh;
  std::uint64_t version = 0;
};

/// Immutable view of the scene handed to readers.
struct SceneSnapshot {
  double time = 0.0;
  NavState state = NavState::SETUP;
  Alert alert = Alert::CLEAR;
  double margin_mm = 0.0;
  bool margin_clipped = false;
  std::vector<InstrumentView> instruments;
  std::vector<ClipRecord> clips;
  MeshSlot tumor, margin, vessel, liver;
  bool liver_context_only = true;
};

/// Single-writer navigation state machine. Not thread-safe: exactly one
/// thread feeds samples and commands; others read snapshots.
class NavEngine {
 public:
  explicit NavEngine(NavConfig config = {});

  void set_tumor(const LabelMask& tumor, const SurfaceOptions& opts = {});
  void set_tumor_model(std::shared_ptr<const TumorModel> model);
  void set_vessels(const SurfaceMesh& mesh);
  void set_preop(const PreopModel& registered);
  void set_margin(double margin_mm);

  /// Throws UNKNOWN_DEVICE for devices not in the configuration.
  SceneDelta update_pose(const TrackedSample& s);

  /// Signed distance from a REFERENCE-frame point to the tumor border.
  /// Throws NOT_NAVIGATING unless navigating with a tumor model.
  double shortest_distance(const Vec3& tip) const;

  /// Records a clip at `tip` (REFERENCE). Throws NOT_NAVIGATING otherwise.
  ClipRecord digitize_clip(const Vec3& tip, double timestamp);
  /// Records a clip at the current pointer tip.
  ClipRecord digitize_clip_at_pointer(double timestamp);

  NavState state() const { return state_; }
  Alert alert() const { return alert_; }
  double margin_mm() const { return config_.margin_mm; }
  const NavConfig& config() const { return config_; }
  const std::vector<ClipRecord>& clips() const { return clips_; }
  std::optional<InstrumentView> instrument(Device d) const;
  /// Latest live reference pose in WORLD, if any.
  std::optional<Pose> reference() const { return reference_live() ? reference_ : std::nullopt; }
  double now() const { return now_; }
  const std::shared_ptr<const TumorModel>& tumor_model() const { return tumor_; }
  SceneSnapshot snapshot() const;

 private:
  void set_state(NavState s, SceneDelta* delta);
  void refresh_alert(SceneDelta* delta);
  void rebuild_margin();
  bool reference_live() const;

  NavConfig config_;
  NavState state_ = NavState::SETUP;
  Alert alert_ = Alert::CLEAR;
  double now_ = 0.0;
  std::shared_ptr<const TumorModel> tumor_;
  std::optional<Pose> reference_;
  std::optional<double> missing_since_;
  std::map<Device, InstrumentView> instruments_;
  std::vector<ClipRecord> clips_;
  MeshSlot tumor_mesh_, margin_mesh_, vessel_mesh_, liver_mesh_;
  bool margin_clipped_ = false;
  std::uint64_t mesh_counter_ = 0;
};

// ---- publishing -------------------------------------------------------------

/// SCENE_UPDATE payload:
/// {state, alert, margin_mm, t, instruments:[{device, q, p, distance_mm}],
///  clips:[{id, p, distance_mm, t}], meshes?:{tumor, margin, vessel, liver}}
/// Mesh entries are included only for the names in `meshes`.
std::string scene_update_payload(const SceneSnapshot& s, const std::vector<std::string>& meshes);

/// Rate-limits SCENE_UPDATE messages and sends each mesh only when its
/// version changed since the last message.
class ScenePublisher {
 public:
  explicit ScenePublisher(double rate_hz = kDefaultPublishRateHz) : rate_hz_(rate_hz) {}

  std::optional<StreamMessage> maybe_publish(const SceneSnapshot& s, bool force = false);
  /// Forget which meshes were sent (e.g. a new subscriber joined).
  void reset_meshes() { sent_versions_.clear(); }

 private:
  double rate_hz_;
  std::optional<double> last_time_;
  std::map<std::string, std::uint64_t> sent_versions_;
};

// ---- session record / replay ----------------------------------------------

struct NavCommand {
  enum class Kind { DigitizeClip, SetMargin };
  Kind kind = Kind::DigitizeClip;
  double timestamp = 0.0;
  double margin_mm = 0.0;

  friend bool operator==(const NavCommand&, const NavCommand&) = default;
};

struct SessionEvent {
  std::optional<TrackedSample> sample;
  std::optional<NavCommand> command;

  friend bool operator==(const SessionEvent&, const SessionEvent&) = default;
};

/// What the engine produced for one event; replay must reproduce it exactly.
struct StepOutput {
  NavState state = NavState::SETUP;
  Alert alert = Alert::CLEAR;
  std::map<Device, double> distances;
  std::optional<ClipRecord> clip;
  std::optional<Errc> error;

  friend bool operator==(const StepOutput&, const StepOutput&) = default;
};

struct SessionRecord {
  NavConfig config;
  std::string tumor_mask_path;  // scene input; relative paths are relative to the session file
  std::vector<SessionEvent> events;
  std::vector<ClipRecord> clips;  // derived
};

/// Feeds events to an engine and records inputs plus derived clip records.
class SessionDriver {
 public:
  explicit SessionDriver(NavEngine& engine) : engine_(engine) { record_.config = engine.config(); }

  StepOutput feed(const TrackedSample& s);
  StepOutput command(const NavCommand& c);
  StepOutput apply(const SessionEvent& e);

  const SessionRecord& record() const { return record_; }
  SessionRecord& record() { return record_; }

 private:
  StepOutput finish(StepOutput out) const;

  NavEngine& engine_;
  SessionRecord record_;
};

/// Merges samples and commands by time (a command applies after every sample
/// stamped at or before it).
std::vector<SessionEvent> merge_events(const std::vector<TrackedSample>& samples,
                                       const std::vector<NavCommand>& commands);

/// Line-delimited JSON: header line, one event per line, derived clip lines,
/// then an end marker with the event count.
std::string format_session(const SessionRecord& r);
/// Throws PARSE with the byte offset of the first bad or missing line.
SessionRecord parse_session(std::string_view bytes);
void save_session(const SessionRecord& r, const std::string& path);
SessionRecord load_session(const std::string& path);

/// Runs the recorded events through a fresh engine with the recorded config.
std::vector<StepOutput> replay_session(const SessionRecord& r, std::shared_ptr<const TumorModel> tumor,
                                       std::vector<ClipRecord>* clips = nullptr);

// Clip record list file (JSON array).
void save_clips(const std::vector<ClipRecord>& clips, const std::string& path);
std::vector<ClipRecord> load_clips(const std::string& path);

}  // namespace usnav
