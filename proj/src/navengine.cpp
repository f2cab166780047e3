#include "usnav/navengine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "usnav/error.hpp"

namespace usnav {

using json = nlohmann::json;

std::string_view to_string(NavState s) {
  switch (s) {
    case NavState::SETUP: return "SETUP";
    case NavState::NAVIGATING: return "NAVIGATING";
    case NavState::LOST: return "LOST";
  }
  return "?";
}

std::string_view to_string(Alert a) {
  switch (a) {
    case Alert::CLEAR: return "CLEAR";
    case Alert::NEAR_MARGIN: return "NEAR_MARGIN";
    case Alert::INSIDE_MARGIN: return "INSIDE_MARGIN";
  }
  return "?";
}

NavState nav_state_from_string(std::string_view s) {
  if (s == "SETUP") return NavState::SETUP;
  if (s == "NAVIGATING") return NavState::NAVIGATING;
  if (s == "LOST") return NavState::LOST;
  throw Error(Errc::Parse, "unknown navigation state '" + std::string(s) + "'");
}

Alert alert_from_string(std::string_view s) {
  if (s == "CLEAR") return Alert::CLEAR;
  if (s == "NEAR_MARGIN") return Alert::NEAR_MARGIN;
  if (s == "INSIDE_MARGIN") return Alert::INSIDE_MARGIN;
  throw Error(Errc::Parse, "unknown alert '" + std::string(s) + "'");
}

Alert check_alert(double d, double margin, double h, Alert previous) {
  if (!std::isfinite(d)) return Alert::CLEAR;
  Alert raw = Alert::CLEAR;
  if (d < margin) {
    raw = Alert::INSIDE_MARGIN;
  } else if (d <= margin + h) {
    raw = Alert::NEAR_MARGIN;
  }
  if (static_cast<int>(raw) >= static_cast<int>(previous)) return raw;
  // Downgrade only once the distance clears the previous state's edge by h.
  if (previous == Alert::INSIDE_MARGIN) {
    if (d < margin + h) return Alert::INSIDE_MARGIN;
    return d >= margin + 2.0 * h ? Alert::CLEAR : Alert::NEAR_MARGIN;
  }
  return d >= margin + 2.0 * h ? Alert::CLEAR : Alert::NEAR_MARGIN;
}

// ---- tumor model --------------------------------------------------------------

std::shared_ptr<const TumorModel> TumorModel::build(const LabelMask& mask, const SurfaceOptions& opts) {
  if (mask.empty()) throw Error(Errc::EmptySegment, "tumor mask is empty");
  auto m = std::make_shared<TumorModel>();
  m->mask = mask;
  m->sdf = distance_field(mask);
  m->mesh = extract_surface(mask, opts);
  m->mesh.kind = LabelKind::TUMOR;
  m->index = MeshDistance(m->mesh);
  return m;
}

double TumorModel::signed_distance(const Vec3& p) const {
  if (!p.allFinite()) throw Error(Errc::InvalidPoint, "query point must be finite");
  const double d = index.closest(p).distance;
  const Vec3 v = sdf.geom.to_voxel(p);
  bool inside = false;
  if ((v.array() >= 0.0).all() && v.x() <= sdf.geom.dims[0] - 1 && v.y() <= sdf.geom.dims[1] - 1 &&
      v.z() <= sdf.geom.dims[2] - 1) {
    inside = sdf.sample(p) < 0.0;
  }
  return inside ? -d : d;
}

// ---- engine -------------------------------------------------------------------

NavEngine::NavEngine(NavConfig config) : config_(std::move(config)) {
  if (!(config_.t_lost_s > 0.0)) throw Error(Errc::InvalidArgument, "t_lost must be positive");
  if (!(config_.hysteresis_mm >= 0.0)) throw Error(Errc::InvalidArgument, "hysteresis must be non-negative");
  if (!(config_.margin_mm > 0.0)) throw Error(Errc::InvalidArgument, "margin must be positive");
  if (!(config_.publish_rate_hz > 0.0)) throw Error(Errc::InvalidArgument, "publish rate must be positive");
  if (std::find(config_.devices.begin(), config_.devices.end(), Device::REFERENCE) == config_.devices.end()) {
    throw Error(Errc::InvalidArgument, "the reference device must be configured");
  }
}

bool NavEngine::reference_live() const { return reference_.has_value() && !missing_since_; }

void NavEngine::set_state(NavState s, SceneDelta* delta) {
  if (s == state_) return;
  state_ = s;
  if (delta) delta->state_changed = true;
}

void NavEngine::refresh_alert(SceneDelta* delta) {
  double best = std::numeric_limits<double>::infinity();
  if (state_ == NavState::NAVIGATING) {
    for (Device d : {Device::SEALER, Device::POINTER}) {
      auto it = instruments_.find(d);
      if (it != instruments_.end() && it->second.distance_mm) best = std::min(best, *it->second.distance_mm);
    }
  }
  const Alert next = std::isfinite(best) ? check_alert(best, config_.margin_mm, config_.hysteresis_mm, alert_)
                                         : Alert::CLEAR;
  if (next != alert_ && delta) delta->alert_changed = true;
  alert_ = next;
}

void NavEngine::rebuild_margin() {
  if (!tumor_) return;
  MarginResult r = expand_margin(tumor_->mask, tumor_->sdf, config_.margin_mm);
  margin_clipped_ = r.clipped;
  SurfaceMesh m = extract_surface(r.mask);
  m.kind = LabelKind::MARGIN;
  margin_mesh_ = {std::make_shared<const SurfaceMesh>(std::move(m)), ++mesh_counter_};
}

void NavEngine::set_tumor(const LabelMask& tumor, const SurfaceOptions& opts) {
  set_tumor_model(TumorModel::build(tumor, opts));
}

void NavEngine::set_tumor_model(std::shared_ptr<const TumorModel> model) {
  if (!model) throw Error(Errc::InvalidArgument, "null tumor model");
  tumor_ = std::move(model);
  tumor_mesh_ = {std::shared_ptr<const SurfaceMesh>(tumor_, &tumor_->mesh), ++mesh_counter_};
  rebuild_margin();
  for (auto& [dev, view] : instruments_) view.distance_mm = tumor_->signed_distance(view.tip.translation());
  if (state_ == NavState::SETUP && reference_live()) state_ = NavState::NAVIGATING;
  refresh_alert(nullptr);
}

void NavEngine::set_vessels(const SurfaceMesh& mesh) {
  vessel_mesh_ = {std::make_shared<const SurfaceMesh>(mesh), ++mesh_counter_};
}

void NavEngine::set_preop(const PreopModel& registered) {
  if (registered.frame != FrameId::REFERENCE) {
    throw Error(Errc::InvalidArgument, "preoperative model must be registered to REFERENCE first");
  }
  liver_mesh_ = {std::make_shared<const SurfaceMesh>(registered.liver), ++mesh_counter_};
}

void NavEngine::set_margin(double margin_mm) {
  if (!(margin_mm > 0.0) || !std::isfinite(margin_mm)) throw Error(Errc::InvalidArgument, "margin must be positive");
  config_.margin_mm = margin_mm;
  rebuild_margin();
  refresh_alert(nullptr);
}

SceneDelta NavEngine::update_pose(const TrackedSample& s) {
  if (std::find(config_.devices.begin(), config_.devices.end(), s.device) == config_.devices.end()) {
    throw Error(Errc::UnknownDevice, "device " + std::string(to_string(s.device)) + " is not configured");
  }
  SceneDelta delta;
  const double t = s.pose.timestamp();
  now_ = std::max(now_, t);

  if (s.device == Device::REFERENCE) {
    if (s.pose.ok()) {
      reference_ = s.pose;
      missing_since_.reset();
      set_state(tumor_ ? NavState::NAVIGATING : NavState::SETUP, &delta);
    } else {
      if (!missing_since_) missing_since_ = t;
      // Instruments cannot be expressed without a reference.
      instruments_.clear();
    }
  } else if (reference_live()) {
    if (s.pose.ok()) {
      InstrumentView view;
      view.device = s.device;
      const Pose rel = express_in_reference(s.pose, *reference_);
      auto off = config_.tip_offsets.find(s.device);
      view.tip = off == config_.tip_offsets.end() ? rel : compose(rel, off->second);
      if (tumor_) view.distance_mm = tumor_->signed_distance(view.tip.translation());
      instruments_[s.device] = view;
      delta.instrument = view;
    } else {
      instruments_.erase(s.device);
    }
  }

  if (missing_since_ && state_ != NavState::LOST && now_ - *missing_since_ > config_.t_lost_s) {
    set_state(NavState::LOST, &delta);
  }
  refresh_alert(&delta);
  delta.state = state_;
  delta.alert = alert_;
  return delta;
}

double NavEngine::shortest_distance(const Vec3& tip) const {
  if (state_ != NavState::NAVIGATING || !tumor_) {
    throw Error(Errc::NotNavigating, "distance queries need state NAVIGATING, engine is " +
                                         std::string(to_string(state_)));
  }
  return tumor_->signed_distance(tip);
}

ClipRecord NavEngine::digitize_clip(const Vec3& tip, double timestamp) {
  ClipRecord c;
  c.intraop_distance = shortest_distance(tip);
  c.id = static_cast<int>(clips_.size()) + 1;
  c.position = tip;
  c.timestamp = timestamp;
  clips_.push_back(c);
  return c;
}

ClipRecord NavEngine::digitize_clip_at_pointer(double timestamp) {
  if (state_ != NavState::NAVIGATING) {
    throw Error(Errc::NotNavigating, "cannot digitize a clip while " + std::string(to_string(state_)));
  }
  auto it = instruments_.find(Device::POINTER);
  if (it == instruments_.end()) throw Error(Errc::PoseMissing, "no current pointer pose");
  return digitize_clip(it->second.tip.translation(), timestamp);
}

std::optional<InstrumentView> NavEngine::instrument(Device d) const {
  auto it = instruments_.find(d);
  if (it == instruments_.end()) return std::nullopt;
  return it->second;
}

SceneSnapshot NavEngine::snapshot() const {
  SceneSnapshot s;
  s.time = now_;
  s.state = state_;
  s.alert = alert_;
  s.margin_mm = config_.margin_mm;
  s.margin_clipped = margin_clipped_;
  if (state_ != NavState::LOST) {
    for (const auto& [d, v] : instruments_) s.instruments.push_back(v);
  }
  s.clips = clips_;
  s.tumor = tumor_mesh_;
  s.margin = margin_mesh_;
  s.vessel = vessel_mesh_;
  s.liver = liver_mesh_;
  return s;
}

// ---- publishing -----------------------------------------------------------------

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

// Display payload: coordinates rounded to 1 um keep large meshes well under the frame limit.
json mesh_json(const SurfaceMesh& m) {
  const auto um = [](double x) { return std::round(x * 1000.0) / 1000.0; };
  std::vector<double> verts;
  verts.reserve(m.vertices.size() * 3);
  for (const auto& v : m.vertices) verts.insert(verts.end(), {um(v.x()), um(v.y()), um(v.z())});
  std::vector<int> tris;
  tris.reserve(m.triangles.size() * 3);
  for (const auto& t : m.triangles) tris.insert(tris.end(), t.begin(), t.end());
  return json{{"vertices", verts}, {"triangles", tris}};
}

json clip_json(const ClipRecord& c) {
  return json{{"id", c.id}, {"p", vec_json(c.position)}, {"distance_mm", c.intraop_distance}, {"t", c.timestamp}};
}

ClipRecord clip_from(const json& j) {
  ClipRecord c;
  c.id = j.at("id").get<int>();
  c.position = vec_from(j.at("p"));
  c.intraop_distance = j.at("distance_mm").get<double>();
  c.timestamp = j.at("t").get<double>();
  return c;
}

const MeshSlot* slot(const SceneSnapshot& s, const std::string& name) {
  if (name == "tumor") return &s.tumor;
  if (name == "margin") return &s.margin;
  if (name == "vessel") return &s.vessel;
  if (name == "liver") return &s.liver;
  return nullptr;
}

constexpr const char* kMeshNames[] = {"tumor", "margin", "vessel", "liver"};

}  // namespace

std::string scene_update_payload(const SceneSnapshot& s, const std::vector<std::string>& meshes) {
  json j;
  j["state"] = std::string(to_string(s.state));
  j["alert"] = std::string(to_string(s.alert));
  j["margin_mm"] = s.margin_mm;
  j["margin_clipped"] = s.margin_clipped;
  j["t"] = s.time;
  j["instruments"] = json::array();
  for (const auto& v : s.instruments) {
    const auto& q = v.tip.rotation();
    json e{{"device", std::string(to_string(v.device))},
           {"q", {q.w(), q.x(), q.y(), q.z()}},
           {"p", vec_json(v.tip.translation())}};
    e["distance_mm"] = v.distance_mm ? json(*v.distance_mm) : json(nullptr);
    j["instruments"].push_back(std::move(e));
  }
  j["clips"] = json::array();
  for (const auto& c : s.clips) j["clips"].push_back(clip_json(c));
  if (!meshes.empty()) {
    json m = json::object();
    for (const auto& name : meshes) {
      const MeshSlot* sl = slot(s, name);
      if (!sl || !sl->mesh) continue;
      json e = mesh_json(*sl->mesh);
      e["version"] = sl->version;
      if (name == "liver") e["context_only"] = s.liver_context_only;
      m[name] = std::move(e);
    }
    j["meshes"] = std::move(m);
  }
  return j.dump();
}

std::optional<StreamMessage> ScenePublisher::maybe_publish(const SceneSnapshot& s, bool force) {
  if (!force && last_time_ && s.time - *last_time_ < 1.0 / rate_hz_ - 1e-9) return std::nullopt;
  last_time_ = s.time;
  std::vector<std::string> changed;
  for (const char* name : kMeshNames) {
    const MeshSlot* sl = slot(s, name);
    if (!sl->mesh) continue;
    auto it = sent_versions_.find(name);
    if (it == sent_versions_.end() || it->second != sl->version) {
      changed.emplace_back(name);
      sent_versions_[name] = sl->version;
    }
  }
  return StreamMessage{MessageKind::SCENE_UPDATE, scene_update_payload(s, changed)};
}

// ---- session driver -------------------------------------------------------------

StepOutput SessionDriver::finish(StepOutput out) const {
  out.state = engine_.state();
  out.alert = engine_.alert();
  if (engine_.state() != NavState::LOST) {
    for (Device d : kAllDevices) {
      if (auto v = engine_.instrument(d); v && v->distance_mm) out.distances[d] = *v->distance_mm;
    }
  }
  return out;
}

StepOutput SessionDriver::feed(const TrackedSample& s) {
  record_.events.push_back({s, std::nullopt});
  StepOutput out;
  try {
    engine_.update_pose(s);
  } catch (const Error& e) {
    out.error = e.code();
  }
  return finish(out);
}

StepOutput SessionDriver::command(const NavCommand& c) {
  record_.events.push_back({std::nullopt, c});
  StepOutput out;
  try {
    switch (c.kind) {
      case NavCommand::Kind::DigitizeClip:
        out.clip = engine_.digitize_clip_at_pointer(c.timestamp);
        record_.clips.push_back(*out.clip);
        break;
      case NavCommand::Kind::SetMargin:
        engine_.set_margin(c.margin_mm);
        break;
    }
  } catch (const Error& e) {
    out.error = e.code();
  }
  return finish(out);
}

StepOutput SessionDriver::apply(const SessionEvent& e) {
  if (e.sample) return feed(*e.sample);
  if (e.command) return command(*e.command);
  throw Error(Errc::InvalidArgument, "empty session event");
}

std::vector<SessionEvent> merge_events(const std::vector<TrackedSample>& samples,
                                       const std::vector<NavCommand>& commands) {
  std::vector<NavCommand> cmds = commands;
  std::stable_sort(cmds.begin(), cmds.end(),
                   [](const NavCommand& a, const NavCommand& b) { return a.timestamp < b.timestamp; });
  std::vector<SessionEvent> out;
  out.reserve(samples.size() + cmds.size());
  std::size_t ci = 0;
  for (const auto& s : samples) {
    while (ci < cmds.size() && cmds[ci].timestamp < s.pose.timestamp()) out.push_back({std::nullopt, cmds[ci++]});
    out.push_back({s, std::nullopt});
  }
  while (ci < cmds.size()) out.push_back({std::nullopt, cmds[ci++]});
  return out;
}

// ---- session file ---------------------------------------------------------------

namespace {

json pose_json(const Pose& p) {
  const auto& q = p.rotation();
  return json{{"q", {q.w(), q.x(), q.y(), q.z()}}, {"p", vec_json(p.translation())}};
}

Pose pose_from(const json& j) {
  const auto& q = j.at("q");
  return Pose(Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()),
              vec_from(j.at("p")));
}

json config_json(const NavConfig& c) {
  json j{{"t_lost_s", c.t_lost_s},
         {"hysteresis_mm", c.hysteresis_mm},
         {"margin_mm", c.margin_mm},
         {"publish_rate_hz", c.publish_rate_hz}};
  j["devices"] = json::array();
  for (Device d : c.devices) j["devices"].push_back(std::string(to_string(d)));
  j["tip_offsets"] = json::object();
  for (const auto& [d, p] : c.tip_offsets) j["tip_offsets"][std::string(to_string(d))] = pose_json(p);
  return j;
}

NavConfig config_from(const json& j) {
  NavConfig c;
  c.t_lost_s = j.at("t_lost_s").get<double>();
  c.hysteresis_mm = j.at("hysteresis_mm").get<double>();
  c.margin_mm = j.at("margin_mm").get<double>();
  c.publish_rate_hz = j.at("publish_rate_hz").get<double>();
  c.devices.clear();
  for (const auto& d : j.at("devices")) c.devices.push_back(device_from_string(d.get<std::string>()));
  for (const auto& [k, v] : j.at("tip_offsets").items()) c.tip_offsets[device_from_string(k)] = pose_from(v);
  return c;
}

}  // namespace

std::string format_session(const SessionRecord& r) {
  std::ostringstream out;
  out << json{{"usnav_session", 1}, {"config", config_json(r.config)}, {"tumor_mask", r.tumor_mask_path}}.dump()
      << '\n';
  for (const auto& e : r.events) {
    json j;
    if (e.sample) {
      j = json::parse(encode_pose_payload(*e.sample));
      j["ev"] = "sample";
    } else if (e.command) {
      j["ev"] = "cmd";
      j["t"] = e.command->timestamp;
      if (e.command->kind == NavCommand::Kind::DigitizeClip) {
        j["cmd"] = "clip";
      } else {
        j["cmd"] = "margin";
        j["margin_mm"] = e.command->margin_mm;
      }
    } else {
      continue;
    }
    out << j.dump() << '\n';
  }
  for (const auto& c : r.clips) {
    json j = clip_json(c);
    j["ev"] = "clip";
    out << j.dump() << '\n';
  }
  out << json{{"ev", "end"}, {"events", r.events.size()}, {"clips", r.clips.size()}}.dump() << '\n';
  return out.str();
}

SessionRecord parse_session(std::string_view bytes) {
  SessionRecord r;
  std::size_t pos = 0;
  bool header = false;
  bool ended = false;
  while (pos < bytes.size()) {
    const std::size_t nl = bytes.find('\n', pos);
    const std::size_t offset = pos;
    auto fail = [&](const std::string& why) -> Error {
      return Error(Errc::Parse, "session byte " + std::to_string(offset) + ": " + why);
    };
    if (nl == std::string_view::npos) throw fail("truncated line");
    const std::string_view line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    if (ended) throw fail("data after end marker");
    try {
      const json j = json::parse(line);
      if (!header) {
        if (j.value("usnav_session", 0) != 1) throw fail("not a session header");
        r.config = config_from(j.at("config"));
        r.tumor_mask_path = j.value("tumor_mask", std::string());
        header = true;
        continue;
      }
      const std::string ev = j.at("ev").get<std::string>();
      if (ev == "sample") {
        r.events.push_back({decode_pose_payload(line), std::nullopt});
      } else if (ev == "cmd") {
        NavCommand c;
        c.timestamp = j.at("t").get<double>();
        const std::string cmd = j.at("cmd").get<std::string>();
        if (cmd == "clip") {
          c.kind = NavCommand::Kind::DigitizeClip;
        } else if (cmd == "margin") {
          c.kind = NavCommand::Kind::SetMargin;
          c.margin_mm = j.at("margin_mm").get<double>();
        } else {
          throw fail("unknown command '" + cmd + "'");
        }
        r.events.push_back({std::nullopt, c});
      } else if (ev == "clip") {
        r.clips.push_back(clip_from(j));
      } else if (ev == "end") {
        if (j.at("events").get<std::size_t>() != r.events.size() || j.at("clips").get<std::size_t>() != r.clips.size()) {
          throw fail("end marker counts do not match");
        }
        ended = true;
      } else {
        throw fail("unknown event '" + ev + "'");
      }
    } catch (const Error& e) {
      if (e.code() == Errc::Parse && std::string_view(e.what()).starts_with("session byte")) throw;
      throw fail(e.what());
    } catch (const std::exception& e) {
      throw fail(e.what());
    }
  }
  if (!header) throw Error(Errc::Parse, "session byte 0: missing header");
  if (!ended) throw Error(Errc::Parse, "session byte " + std::to_string(bytes.size()) + ": missing end marker");
  return r;
}

void save_session(const SessionRecord& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write session '" + path + "'");
  out << format_session(r);
  if (!out) throw Error(Errc::Io, "write failed for '" + path + "'");
}

SessionRecord load_session(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open session '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_session(ss.str());
}

std::vector<StepOutput> replay_session(const SessionRecord& r, std::shared_ptr<const TumorModel> tumor,
                                       std::vector<ClipRecord>* clips) {
  NavEngine engine(r.config);
  if (tumor) engine.set_tumor_model(std::move(tumor));
  SessionDriver driver(engine);
  std::vector<StepOutput> out;
  out.reserve(r.events.size());
  for (const auto& e : r.events) out.push_back(driver.apply(e));
  if (clips) *clips = driver.record().clips;
  return out;
}

void save_clips(const std::vector<ClipRecord>& clips, const std::string& path) {
  json j = json::array();
  for (const auto& c : clips) j.push_back(clip_json(c));
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write clips '" + path + "'");
  out << j.dump(2) << '\n';
}

std::vector<ClipRecord> load_clips(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open clips '" + path + "'");
  try {
    std::vector<ClipRecord> out;
    for (const auto& c : json::parse(in)) out.push_back(clip_from(c));
    return out;
  } catch (const std::exception& e) {
    throw Error(Errc::Parse, "bad clip file '" + path + "': " + e.what());
  }
}

}  // namespace usnav
