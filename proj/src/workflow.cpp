#include "usnav/workflow.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>
#include <thread>

#include "usnav/error.hpp"
#include "usnav/mesh.hpp"
#include "usnav/navservice.hpp"
#include "usnav/registration.hpp"
#include "usnav/usrecon.hpp"

namespace usnav {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Scenario constants. The frame is slightly smaller than the phantom so that
// no pixel samples outside the ground-truth volume.
constexpr int kFramePixels = 157;
constexpr double kFrameHalfExtentMm = 39.0;
constexpr double kSweepSeconds = 8.0;
constexpr double kClipPeriodS = 1.5;
constexpr double kScriptRateHz = 120.0;
const Vec3 kPreopOffset(12.0, -7.0, 5.0);

fs::path P(const std::string& dir, const char* rel) { return fs::path(dir) / rel; }

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw Error(Errc::Io, "cannot create directory '" + p.string() + "'");
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error(Errc::Io, "cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::Io, "cannot open '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw Error(Errc::Parse, "bad JSON in '" + p.string() + "': " + e.what());
  }
}

// Patient motion: slow drift and rotation of the reference sensor in WORLD.
Pose reference_motion(double t) {
  const Vec3 p(100.0 + 5.0 * std::sin(2.0 * M_PI * t / 4.0), 50.0 + 3.0 * std::cos(2.0 * M_PI * t / 6.0),
               -30.0 + 2.0 * std::sin(2.0 * M_PI * t / 3.0));
  const Pose tilt = Pose::from_axis_angle(Vec3(1.0, 0.0, 0.0), 0.3, Vec3::Zero(), t);
  const Pose sway = Pose::from_axis_angle(Vec3(0.0, 0.0, 1.0), 0.05 * std::sin(2.0 * M_PI * t / 5.0), p, t);
  return compose(sway, tilt);
}

// Image plane x-z (u along +x, v along -z), swept along +y.
Pose image_pose_at(double t) {
  const double frac = std::clamp(t / kSweepSeconds, 0.0, 1.0);
  const double y = -kFrameHalfExtentMm + 2.0 * kFrameHalfExtentMm * frac;
  return Pose::from_axis_angle(Vec3::UnitX(), -M_PI / 2.0, Vec3(-kFrameHalfExtentMm, y, kFrameHalfExtentMm), t,
                               FrameId::REFERENCE);
}

Pose image_to_sensor() { return Pose::from_axis_angle(Vec3(0.0, 1.0, 0.0), 0.1, Vec3(5.0, -3.0, 20.0)); }
Pose pointer_tip_offset() { return Pose::from_translation(Vec3(0.0, 0.0, 150.0)); }
Pose sealer_tip_offset() { return Pose::from_translation(Vec3(0.0, 0.0, 200.0)); }

Vec3 lerp(const Vec3& a, const Vec3& b, double f) { return a + (b - a) * std::clamp(f, 0.0, 1.0); }

// Pointer tip: parked during the sweep, then visits each clip site in turn.
Vec3 pointer_tip_at(double t, const Vec3& park, const std::vector<ScenarioClip>& clips) {
  Vec3 at = park;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const double start = kSweepSeconds + kClipPeriodS * static_cast<double>(i);
    if (t < start) break;
    at = lerp(at, clips[i].position, (t - start) / (kClipPeriodS / 3.0));
  }
  return at;
}

// Sealer tip: approaches the tumor after the sweep.
Vec3 sealer_tip_at(double t, const Vec3& center, double radius, double end) {
  const Vec3 dir = Vec3(1.0, -1.0, 1.0).normalized();
  const double f = (t - kSweepSeconds) / std::max(1e-9, end - kSweepSeconds);
  return center + dir * (radius + 35.0 - 33.0 * std::clamp(f, 0.0, 1.0));
}

}  // namespace

void require_file(const std::string& path, const std::string& produced_by) {
  if (!fs::exists(path)) {
    throw Error(Errc::Io, "missing input '" + path + "'" + (produced_by.empty() ? "" : " (run `usnav " + produced_by + "` first)"));
  }
}

LabelMask analytic_sphere_mask(const GridGeometry& g, const Vec3& center, double radius, LabelKind kind) {
  LabelMask m = LabelMask::zeros(g, kind);
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    if ((g.center(i) - center).squaredNorm() <= radius * radius) m.data[i] = 1;
  }
  return m;
}

// ---- scenario file ------------------------------------------------------------

void save_scenario(const Scenario& s, const std::string& path) {
  json j;
  j["seed"] = s.seed;
  j["patient_id"] = s.patient_id;
  j["tumor_radius_mm"] = s.tumor_radius_mm;
  j["tumor_center"] = vec(s.tumor_center);
  j["inside_seeds_mm"] = json::array();
  for (const auto& p : s.inside_seeds_mm) j["inside_seeds_mm"].push_back(vec(p));
  j["outside_seeds_mm"] = json::array();
  for (const auto& p : s.outside_seeds_mm) j["outside_seeds_mm"].push_back(vec(p));
  j["clips"] = json::array();
  for (const auto& c : s.clips) {
    j["clips"].push_back({{"position", vec(c.position)},
                          {"axis", vec(c.axis)},
                          {"true_distance_mm", c.true_distance_mm},
                          {"command_time", c.command_time},
                          {"detached", c.detached}});
  }
  j["preop_offset"] = vec(s.preop_offset);
  j["detach_at"] = s.detach_at ? json(*s.detach_at) : json(nullptr);
  j["sweep_end_s"] = s.sweep_end_s;
  j["duration_s"] = s.duration_s;
  write_json(path, j);
}

Scenario load_scenario(const std::string& path) {
  require_file(path, "simulate");
  const json j = read_json(path);
  Scenario s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.patient_id = j.at("patient_id").get<std::string>();
    s.tumor_radius_mm = j.at("tumor_radius_mm").get<double>();
    s.tumor_center = vec(j.at("tumor_center"));
    for (const auto& p : j.at("inside_seeds_mm")) s.inside_seeds_mm.push_back(vec(p));
    for (const auto& p : j.at("outside_seeds_mm")) s.outside_seeds_mm.push_back(vec(p));
    for (const auto& c : j.at("clips")) {
      ScenarioClip sc;
      sc.position = vec(c.at("position"));
      sc.axis = vec(c.at("axis"));
      sc.true_distance_mm = c.at("true_distance_mm").get<double>();
      sc.command_time = c.at("command_time").get<double>();
      sc.detached = c.at("detached").get<bool>();
      s.clips.push_back(sc);
    }
    s.preop_offset = vec(j.at("preop_offset"));
    if (!j.at("detach_at").is_null()) s.detach_at = j.at("detach_at").get<double>();
    s.sweep_end_s = j.at("sweep_end_s").get<double>();
    s.duration_s = j.at("duration_s").get<double>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::Parse, "bad scenario '" + path + "': " + e.what());
  }
  return s;
}

// ---- simulate -----------------------------------------------------------------

SimulateResult run_simulate(const SimulateOptions& o) {
  if (!(o.tumor_radius_mm > 0.0 && o.tumor_radius_mm <= 25.0)) {
    throw Error(Errc::InvalidArgument, "tumor radius must lie in (0, 25] mm");
  }
  if (!(o.spacing_mm > 0.0)) throw Error(Errc::InvalidArgument, "spacing must be positive");
  if (o.clips < 1 || o.clips > 12) throw Error(Errc::InvalidArgument, "clip count must lie in [1, 12]");
  if (o.detached_clips < 0 || o.detached_clips >= o.clips) {
    throw Error(Errc::InvalidArgument, "detached clips must be fewer than placed clips");
  }
  ensure_dir(o.dir);
  ensure_dir(P(o.dir, "truth"));

  const PhantomSpec spec = [&] {
    PhantomSpec s = default_phantom(o.tumor_radius_mm);
    s.seed = o.seed;
    return s;
  }();
  save_phantom_spec(spec, P(o.dir, "phantom.json").string());
  const GroundTruth gt = rasterize(spec, o.spacing_mm);
  save_volume(gt.volume, P(o.dir, "truth/volume.json").string());
  save_mask(gt.tumor, P(o.dir, "truth/tumor.json").string());
  save_mask(gt.vessel, P(o.dir, "truth/vessel.json").string());

  const double r = o.tumor_radius_mm;
  const Vec3 center = spec.tumors.front().center;

  Scenario sc;
  sc.seed = o.seed;
  sc.patient_id = o.patient_id;
  sc.tumor_radius_mm = r;
  sc.tumor_center = center;
  sc.inside_seeds_mm = {center, center + Vec3(0.3 * r, 0.0, 0.0), center + Vec3(0.0, -0.3 * r, 0.0)};
  for (const Vec3& d : {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 0, 1), Vec3(0, 0, -1), Vec3(0, -1, 0)}) {
    sc.outside_seeds_mm.push_back(center + d * (r + 6.0));
  }
  sc.preop_offset = kPreopOffset;
  sc.detach_at = o.detach_at;
  sc.sweep_end_s = kSweepSeconds;
  sc.duration_s = kSweepSeconds + kClipPeriodS * o.clips + 0.5;

  // Clip sites on random directions at increasing distances from the border.
  std::mt19937_64 rng(o.seed + 2);
  std::normal_distribution<double> g(0.0, 1.0);
  auto random_dir = [&] {
    Vec3 v(g(rng), g(rng), g(rng));
    while (v.norm() < 1e-6) v = Vec3(g(rng), g(rng), g(rng));
    return Vec3(v.normalized());
  };
  for (int i = 0; i < o.clips; ++i) {
    ScenarioClip c;
    c.true_distance_mm = 3.0 + 8.0 * i / std::max(1, o.clips - 1);
    c.position = center + random_dir() * (r + c.true_distance_mm);
    c.axis = random_dir();
    c.command_time = kSweepSeconds + kClipPeriodS * i + 1.0;
    c.detached = i >= o.clips - o.detached_clips;
    sc.clips.push_back(c);
  }
  save_scenario(sc, P(o.dir, "scenario.json").string());

  // Device scripts in WORLD, sampled densely.
  const Pose cal = image_to_sensor();
  const Pose cal_inv = invert(cal);
  const Pose ptr_inv = invert(pointer_tip_offset());
  const Pose sealer_inv = invert(sealer_tip_offset());
  const Vec3 park = center + Vec3(r + 40.0, 0.0, 0.0);
  const Quat pointer_rot(Eigen::AngleAxisd(2.5, Vec3(1.0, 0.2, 0.0).normalized()));
  const Quat sealer_rot(Eigen::AngleAxisd(2.2, Vec3(0.3, 1.0, 0.0).normalized()));
  std::map<Device, PoseTimeline> script;
  const int n = static_cast<int>(std::ceil(sc.duration_s * kScriptRateHz)) + 1;
  for (int k = 0; k <= n; ++k) {
    const double t = k / kScriptRateHz;
    const Pose ref = reference_motion(t);
    script[Device::REFERENCE].push_back(ref.with_timestamp(t));
    script[Device::PROBE].push_back(compose(compose(ref, image_pose_at(t)), cal_inv).with_timestamp(t).with_frame(FrameId::WORLD));
    const Pose ptr_tip(pointer_rot, pointer_tip_at(t, park, sc.clips), t);
    script[Device::POINTER].push_back(compose(compose(ref, ptr_tip), ptr_inv).with_timestamp(t).with_frame(FrameId::WORLD));
    const Pose sealer_tip(sealer_rot, sealer_tip_at(t, center, r, sc.duration_s), t);
    script[Device::SEALER].push_back(compose(compose(ref, sealer_tip), sealer_inv).with_timestamp(t).with_frame(FrameId::WORLD));
  }

  SimulatorConfig cfg;
  cfg.rate_hz = o.rate_hz;
  cfg.duration_s = sc.duration_s;
  cfg.noise = o.noise;
  cfg.detach_at = o.detach_at;
  cfg.seed = o.seed + 1;
  TrackingLog log;
  log.header.rate_hz = o.rate_hz;
  log.header.calibrations[Device::PROBE] = cal;
  log.header.calibrations[Device::POINTER] = pointer_tip_offset();
  log.header.calibrations[Device::SEALER] = sealer_tip_offset();
  log.samples = simulate_tracker(script, cfg);
  write_log_file(log, P(o.dir, "tracking.log").string());

  // Sweep images rendered at the true image poses.
  std::vector<ImagePayload> images;
  const int frames = kFramePixels;
  for (int i = 0; i < frames; ++i) {
    const double t = kSweepSeconds * i / (frames - 1);
    const UsFrame f = render_frame(gt, image_pose_at(t), kFramePixels, kFramePixels, 0.5, spec.speckle,
                                   o.seed * 1000003ULL + static_cast<std::uint64_t>(i));
    ImagePayload img;
    img.width = static_cast<std::uint32_t>(f.width);
    img.height = static_cast<std::uint32_t>(f.height);
    img.du = static_cast<float>(f.du);
    img.dv = static_cast<float>(f.dv);
    img.timestamp = t;
    img.sequence = static_cast<std::uint64_t>(i);
    img.pixels = f.pixels;
    images.push_back(std::move(img));
  }
  save_frames(images, P(o.dir, "frames.bin").string());

  // Preoperative model: liver outline and tumor mask in their own frame.
  PreopModel preop;
  preop.liver = make_ellipsoid_mesh(spec.liver->center + kPreopOffset, spec.liver->radii, 24, 48, LabelKind::LIVER,
                                    FrameId::PREOP_MODEL);
  LabelMask preop_tumor = gt.tumor;
  preop_tumor.geom.origin += kPreopOffset;
  preop.tumor_mask = preop_tumor;
  save_preop_model(preop, P(o.dir, "preop").string());

  // Specimen: ground-truth tumor plus every clip that stayed attached.
  CohortPatient patient;
  patient.specimen.patient_id = o.patient_id;
  patient.specimen.tumor = gt.tumor;
  patient.specimen.clips = LabelMask::zeros(gt.tumor.geom, LabelKind::CLIP);
  for (const auto& c : sc.clips) {
    if (!c.detached) stamp_clip(patient.specimen.clips, c.position, c.axis);
  }
  const fs::path pdir = fs::path(o.dir) / "cohort" / o.patient_id;
  ensure_dir(pdir);
  save_mask(patient.specimen.tumor, (pdir / "specimen_tumor.json").string());
  save_mask(patient.specimen.clips, (pdir / "specimen_clips.json").string());

  SimulateResult res;
  res.samples = log.samples.size();
  res.frames = images.size();
  res.tumor_mask_volume_mm3 = gt.tumor.volume_mm3();
  res.tumor_analytic_volume_mm3 = gt.tumor_volume_mm3;
  return res;
}

// ---- reconstruct --------------------------------------------------------------

ReconstructResult run_reconstruct(const ReconstructOptions& o) {
  const std::string log_path = P(o.dir, "tracking.log").string();
  const std::string frames_path = P(o.dir, "frames.bin").string();
  require_file(log_path, "simulate");
  require_file(frames_path, "simulate");
  const TrackingLog log = read_log_file(log_path);
  auto it = log.header.calibrations.find(Device::PROBE);
  if (it == log.header.calibrations.end()) throw Error(Errc::InvalidArgument, "tracking log has no probe calibration");
  Calibration cal;
  cal.image_to_sensor = it->second;
  const SweepAssembly sweep = assemble_sweep(load_frames(frames_path), log, cal);
  if (sweep.frames.empty()) throw Error(Errc::EmptySweep, "no frame of the sweep has a valid pose");

  ReconstructResult res;
  res.frames = sweep.frames.size();
  res.dropped = sweep.dropped;
  VoxelVolume raw = compound(sweep.frames, o.spacing_mm);
  for (auto w : raw.weight) res.holes_before += (w == 0);
  VoxelVolume filled = hole_fill(raw, o.hole_radius_mm);
  for (auto w : filled.weight) res.holes_after += (w == 0);
  res.geom = filled.geom;
  ensure_dir(P(o.dir, "recon"));
  save_volume(filled, P(o.dir, "recon/volume.json").string());
  return res;
}

// ---- segment ------------------------------------------------------------------

SegmentResult run_segment(const SegmentOptions& o) {
  const std::string vol_path = P(o.dir, "recon/volume.json").string();
  require_file(vol_path, "reconstruct");
  const Scenario sc = load_scenario(P(o.dir, "scenario.json").string());
  const VoxelVolume v = load_volume(vol_path);

  SeedSet seeds;
  auto to_index = [&](const Vec3& p) {
    const Index3 ijk = v.geom.nearest(p);
    if (!v.geom.contains(ijk)) throw Error(Errc::InvalidArgument, "seed point lies outside the reconstructed volume");
    return ijk;
  };
  for (const auto& p : sc.inside_seeds_mm) seeds.inside.push_back(to_index(p));
  for (const auto& p : sc.outside_seeds_mm) seeds.outside.push_back(to_index(p));
  LabelMask tumor = region_grow(v, seeds, o.tolerance);
  tumor.kind = LabelKind::TUMOR;
  const LabelMask vessel = run_segmenter(ThresholdVesselSegmenter(o.vessel), v, LabelKind::VESSEL);
  const MarginResult margin = expand_margin(tumor, o.margin_mm);

  ensure_dir(P(o.dir, "seg"));
  save_mask(tumor, P(o.dir, "seg/tumor.json").string());
  save_mask(vessel, P(o.dir, "seg/vessel.json").string());
  save_mask(margin.mask, P(o.dir, "seg/margin.json").string());
  save_mesh(extract_surface(tumor), P(o.dir, "seg/tumor.mesh").string());
  if (!vessel.empty()) {
    SurfaceMesh vm = extract_surface(vessel);
    vm.kind = LabelKind::VESSEL;
    save_mesh(vm, P(o.dir, "seg/vessel.mesh").string());
  }

  SegmentResult res;
  res.tumor_volume_mm3 = tumor.volume_mm3();
  res.tumor_centroid = centroid(tumor);
  res.vessel_volume_mm3 = vessel.volume_mm3();
  res.margin_clipped = margin.clipped;
  return res;
}

// ---- register -----------------------------------------------------------------

RegisterResult run_register(const RegisterOptions& o) {
  const std::string tumor_path = P(o.dir, "seg/tumor.json").string();
  require_file(tumor_path, "segment");
  require_file(P(o.dir, "preop/liver.mesh").string(), "simulate");
  const PreopModel preop = load_preop_model(P(o.dir, "preop").string());
  const LabelMask tumor = load_mask(tumor_path);
  RegisterResult res;
  res.preop_centroid = preop.tumor_centroid;
  res.intraop_centroid = centroid(tumor);
  res.translation = single_landmark(res.preop_centroid, res.intraop_centroid);
  const PreopModel reg = apply_registration(preop, res.translation);
  ensure_dir(P(o.dir, "reg"));
  save_mesh(reg.liver, P(o.dir, "reg/liver.mesh").string());
  write_json(P(o.dir, "reg/registration.json"), json{{"translation", vec(res.translation)},
                                                      {"preop_centroid", vec(res.preop_centroid)},
                                                      {"intraop_centroid", vec(res.intraop_centroid)},
                                                      {"context_only", true}});
  return res;
}

// ---- navigate -----------------------------------------------------------------

NavigateResult run_navigate(const NavigateOptions& o) {
  const std::string log_path = P(o.dir, "tracking.log").string();
  const std::string tumor_path = P(o.dir, "seg/tumor.json").string();
  require_file(log_path, "simulate");
  require_file(tumor_path, "segment");
  const Scenario sc = load_scenario(P(o.dir, "scenario.json").string());
  const TrackingLog log = read_log_file(log_path);

  NavConfig cfg;
  cfg.margin_mm = o.margin_mm;
  cfg.t_lost_s = o.t_lost_s;
  cfg.hysteresis_mm = o.hysteresis_mm;
  cfg.publish_rate_hz = o.publish_rate_hz;
  cfg.devices = log.header.devices;
  for (Device d : {Device::POINTER, Device::SEALER}) {
    if (auto it = log.header.calibrations.find(d); it != log.header.calibrations.end()) cfg.tip_offsets[d] = it->second;
  }
  auto engine = std::make_unique<NavEngine>(cfg);
  engine->set_tumor_model(TumorModel::build(load_mask(tumor_path)));
  if (fs::exists(P(o.dir, "seg/vessel.mesh"))) engine->set_vessels(load_mesh(P(o.dir, "seg/vessel.mesh").string()));
  if (fs::exists(P(o.dir, "reg/liver.mesh"))) {
    PreopModel reg;
    reg.liver = load_mesh(P(o.dir, "reg/liver.mesh").string());
    reg.frame = FrameId::REFERENCE;
    engine->set_preop(reg);
  }

  std::vector<NavCommand> commands;
  for (const auto& c : sc.clips) commands.push_back({NavCommand::Kind::DigitizeClip, c.command_time, 0.0});
  const std::vector<SessionEvent> events = merge_events(log.samples, commands);

  NavigateResult res;
  SessionRecord record;
  if (!o.port) {
    SessionDriver driver(*engine);
    driver.record().tumor_mask_path = "../seg/tumor.json";
    for (const auto& e : events) res.steps.push_back(driver.apply(e));
    record = driver.record();
  } else {
    ServiceOptions so;
    so.port = *o.port;
    so.ws_port = o.ws_port;
    NavigationService service(std::move(engine), so);
    if (o.log) {
      o.log("serving scene updates on tcp port " + std::to_string(service.port()) +
            (service.ws_port() ? ", websocket port " + std::to_string(*service.ws_port()) : ""));
    }
    const auto wall0 = std::chrono::steady_clock::now();
    const double t0 = events.empty() ? 0.0 : (events.front().sample ? events.front().sample->pose.timestamp() : 0.0);
    for (const auto& e : events) {
      if (o.stop && o.stop->load()) break;
      const double t = e.sample ? e.sample->pose.timestamp() : e.command->timestamp;
      const auto due = wall0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double>((t - t0) / std::max(o.speed, 1e-6)));
      std::this_thread::sleep_until(due);
      if (e.sample) {
        service.submit(*e.sample);
      } else {
        UiCommand c;
        c.kind = UiCommand::Kind::Clip;
        c.timestamp = e.command->timestamp;
        service.submit(c);
      }
    }
    service.drain();
    while (o.hold && !(o.stop && o.stop->load())) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    service.drain();
    record = service.record();
    record.tumor_mask_path = "../seg/tumor.json";
    service.stop();
    // Derive the step sequence from the record; replay is exact.
    res.steps = replay_session(record, TumorModel::build(load_mask(tumor_path)));
  }

  res.events = record.events.size();
  res.clips = record.clips;
  std::ostringstream csv;
  csv << "index,t,event,state,alert,min_distance_mm,error\n";
  Alert prev_alert = Alert::CLEAR;
  for (std::size_t i = 0; i < res.steps.size(); ++i) {
    const StepOutput& s = res.steps[i];
    const SessionEvent& e = record.events[i];
    const double t = e.sample ? e.sample->pose.timestamp() : e.command->timestamp;
    if (s.state == NavState::LOST && !res.lost_at) res.lost_at = t;
    if (s.alert != prev_alert) ++res.alert_transitions;
    prev_alert = s.alert;
    if (e.command && s.error) ++res.rejected_clips;
    double best = std::numeric_limits<double>::infinity();
    for (Device d : {Device::SEALER, Device::POINTER}) {
      if (auto it = s.distances.find(d); it != s.distances.end()) best = std::min(best, it->second);
    }
    csv << i << ',' << t << ',' << (e.sample ? std::string(to_string(e.sample->device)) : std::string("CLIP")) << ','
        << to_string(s.state) << ',' << to_string(s.alert) << ',' << (std::isfinite(best) ? std::to_string(best) : "")
        << ',' << (s.error ? std::string(to_string(*s.error)) : "") << '\n';
  }

  ensure_dir(P(o.dir, "nav"));
  save_session(record, P(o.dir, "nav/session.jsonl").string());
  save_clips(record.clips, P(o.dir, "nav/clips.json").string());
  {
    std::ofstream out(P(o.dir, "nav/events.csv"));
    if (!out) throw Error(Errc::Io, "cannot write nav/events.csv");
    out << csv.str();
  }
  const fs::path pdir = fs::path(o.dir) / "cohort" / sc.patient_id;
  ensure_dir(pdir);
  save_clips(record.clips, (pdir / "clips.json").string());
  return res;
}

// ---- evaluate / replay ----------------------------------------------------------

AccuracyReport run_evaluate(const EvaluateOptions& o) {
  const AccuracyReport r = accuracy_report(load_cohort(o.cohort));
  if (!o.out.empty()) write_report(r, o.out);
  return r;
}

ReplayResult run_replay(const ReplayOptions& o) {
  require_file(o.session, "navigate");
  const SessionRecord rec = load_session(o.session);
  std::string tumor = o.tumor_mask;
  if (tumor.empty()) {
    if (rec.tumor_mask_path.empty()) throw Error(Errc::InvalidArgument, "session names no tumor mask; pass --tumor");
    // Relative paths in the session are relative to the session file.
    const fs::path recorded(rec.tumor_mask_path);
    tumor = (recorded.is_absolute() ? recorded : fs::path(o.session).parent_path() / recorded).lexically_normal().string();
  }
  require_file(tumor, "segment");
  ReplayResult res;
  const auto steps = replay_session(rec, TumorModel::build(load_mask(tumor)), &res.clips);
  res.events = steps.size();
  res.identical = res.clips == rec.clips;
  return res;
}

}  // namespace usnav
