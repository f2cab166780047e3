#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "usnav/evalkit.hpp"
#include "usnav/navengine.hpp"
#include "usnav/phantom.hpp"
#include "usnav/segment.hpp"
#include "usnav/tracking.hpp"

namespace usnav {

// Stage functions behind the `usnav` subcommands. All stages share one work
// directory:
//
//   scenario.json            seeds (mm), clip commands, ground-truth clip
//                            positions, preoperative offset, patient id
//   phantom.json             phantom description
//   truth/                   rasterized ground truth (volume, tumor, vessel)
//   tracking.log             tracked samples; header carries calibrations
//   frames.bin               raw IMAGE_FRAME messages of the sweep
//   preop/                   preoperative liver mesh and tumor mask
//   cohort/<patient>/        specimen masks (+ clips.json after navigate)
//   recon/volume.json        compounded, hole-filled volume
//   seg/                     tumor/vessel/margin masks and meshes
//   reg/                     registration.json and the registered preop model
//   nav/                     session.jsonl, clips.json, events.csv
//   report/                  evaluation report

using StageLog = std::function<void(const std::string&)>;

struct SimulateOptions {
  std::string dir;
  std::uint64_t seed = 1;
  double spacing_mm = kDefaultVoxelSpacingMm;
  double tumor_radius_mm = 15.0;
  double rate_hz = 60.0;
  TrackerNoise noise;
  std::optional<double> detach_at;
  int clips = 5;
  int detached_clips = 0;  // placed intraoperatively but absent from the specimen
  std::string patient_id = "P01";
};

struct SimulateResult {
  std::size_t samples = 0;
  std::size_t frames = 0;
  double tumor_mask_volume_mm3 = 0.0;
  double tumor_analytic_volume_mm3 = 0.0;
};

struct ScenarioClip {
  Vec3 position = Vec3::Zero();  // REFERENCE
  Vec3 axis = Vec3::UnitX();
  double true_distance_mm = 0.0;
  double command_time = 0.0;
  bool detached = false;
};

struct Scenario {
  std::uint64_t seed = 1;
  std::string patient_id = "P01";
  double tumor_radius_mm = 15.0;
  Vec3 tumor_center = Vec3::Zero();
  std::vector<Vec3> inside_seeds_mm;
  std::vector<Vec3> outside_seeds_mm;
  std::vector<ScenarioClip> clips;
  Vec3 preop_offset = Vec3::Zero();  // preop = reference + offset
  std::optional<double> detach_at;
  double sweep_end_s = 0.0;
  double duration_s = 0.0;
};

void save_scenario(const Scenario& s, const std::string& path);
Scenario load_scenario(const std::string& path);

SimulateResult run_simulate(const SimulateOptions& o);

struct ReconstructOptions {
  std::string dir;
  double spacing_mm = kDefaultVoxelSpacingMm;
  double hole_radius_mm = kDefaultHoleFillRadiusMm;
};

struct ReconstructResult {
  std::size_t frames = 0;
  std::size_t dropped = 0;
  std::size_t holes_before = 0;
  std::size_t holes_after = 0;
  GridGeometry geom;
};

ReconstructResult run_reconstruct(const ReconstructOptions& o);

struct SegmentOptions {
  std::string dir;
  double tolerance = 60.0;
  VesselParams vessel;
  double margin_mm = 10.0;
};

struct SegmentResult {
  double tumor_volume_mm3 = 0.0;
  Vec3 tumor_centroid = Vec3::Zero();
  double vessel_volume_mm3 = 0.0;
  bool margin_clipped = false;
};

SegmentResult run_segment(const SegmentOptions& o);

struct RegisterOptions {
  std::string dir;
};

struct RegisterResult {
  Vec3 translation = Vec3::Zero();
  Vec3 preop_centroid = Vec3::Zero();
  Vec3 intraop_centroid = Vec3::Zero();
};

RegisterResult run_register(const RegisterOptions& o);

struct NavigateOptions {
  std::string dir;
  double margin_mm = 10.0;
  double t_lost_s = kDefaultTLostS;
  double hysteresis_mm = kDefaultHysteresisMm;
  double publish_rate_hz = kDefaultPublishRateHz;
  // When set, the recorded stream is served live over TCP (and optionally a
  // WebSocket bridge) instead of being processed as a batch.
  std::optional<std::uint16_t> port;
  std::optional<std::uint16_t> ws_port;
  double speed = 1.0;                   // live playback speed factor
  bool hold = false;                    // keep serving after playback until stop
  const std::atomic<bool>* stop = nullptr;
  StageLog log;
};

struct NavigateResult {
  std::vector<ClipRecord> clips;
  std::size_t rejected_clips = 0;
  std::optional<double> lost_at;      // first time the engine entered LOST
  std::size_t alert_transitions = 0;
  std::size_t events = 0;
  std::vector<StepOutput> steps;
};

NavigateResult run_navigate(const NavigateOptions& o);

struct EvaluateOptions {
  std::string cohort;
  std::string out;
};

AccuracyReport run_evaluate(const EvaluateOptions& o);

struct ReplayOptions {
  std::string session;
  std::string tumor_mask;  // defaults to the path recorded in the session
};

struct ReplayResult {
  std::size_t events = 0;
  std::vector<ClipRecord> clips;
  bool identical = false;  // replayed clips equal the recorded ones
};

ReplayResult run_replay(const ReplayOptions& o);

/// Inside test against the analytic sphere at every voxel centre of `g`.
LabelMask analytic_sphere_mask(const GridGeometry& g, const Vec3& center, double radius, LabelKind kind);

/// Throws IO naming `path` if it does not exist.
void require_file(const std::string& path, const std::string& produced_by);

}  // namespace usnav
