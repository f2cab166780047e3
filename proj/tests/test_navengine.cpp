#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <random>

#include "nav_fixture.hpp"
#include "support.hpp"
#include "usnav/navengine.hpp"

using namespace usnav;
using testing::sample;
using testing::sphere_tumor;
using json = nlohmann::json;

namespace {

NavEngine navigating_engine(NavConfig cfg = {}) {
  NavEngine e(std::move(cfg));
  e.set_tumor_model(sphere_tumor());
  e.update_pose(sample(Device::REFERENCE, Pose::identity(), 0.0, 1));
  return e;
}

}  // namespace

// ---- alerts -----------------------------------------------------------------------

TEST_CASE("alert examples") {
  CHECK(check_alert(12.0, 10.0, 2.0) == Alert::NEAR_MARGIN);
  CHECK(check_alert(9.9, 10.0, 2.0) == Alert::INSIDE_MARGIN);
  CHECK(check_alert(10.0, 10.0, 2.0) == Alert::NEAR_MARGIN);
  CHECK(check_alert(12.01, 10.0, 2.0) == Alert::CLEAR);
  CHECK(check_alert(-3.0, 10.0, 2.0) == Alert::INSIDE_MARGIN);

  Alert a = Alert::CLEAR;
  a = check_alert(9.9, 10, 2, a);
  CHECK(a == Alert::INSIDE_MARGIN);
  a = check_alert(10.5, 10, 2, a);
  CHECK(a == Alert::INSIDE_MARGIN);
  a = check_alert(10.5, 10, 2, a);
  CHECK(a == Alert::INSIDE_MARGIN);
  a = check_alert(11.99, 10, 2, a);
  CHECK(a == Alert::INSIDE_MARGIN);
  a = check_alert(12.0, 10, 2, a);
  CHECK(a == Alert::NEAR_MARGIN);
  a = check_alert(13.9, 10, 2, a);
  CHECK(a == Alert::NEAR_MARGIN);
  a = check_alert(14.0, 10, 2, a);
  CHECK(a == Alert::CLEAR);
  CHECK(check_alert(20.0, 10, 2, Alert::INSIDE_MARGIN) == Alert::CLEAR);
}

TEST_CASE("alert does not flicker around an edge") {
  Alert a = Alert::INSIDE_MARGIN;
  int transitions = 0;
  for (int i = 0; i < 200; ++i) {
    const double d = 10.0 + 0.4 * std::sin(0.7 * i);
    const Alert next = check_alert(d, 10.0, 2.0, a);
    transitions += next != a;
    a = next;
  }
  CHECK(transitions == 0);
}

TEST_CASE("enum names round-trip") {
  for (auto s : {NavState::SETUP, NavState::NAVIGATING, NavState::LOST}) CHECK(nav_state_from_string(to_string(s)) == s);
  for (auto a : {Alert::CLEAR, Alert::NEAR_MARGIN, Alert::INSIDE_MARGIN}) CHECK(alert_from_string(to_string(a)) == a);
  CHECK_ERRC(alert_from_string("LOUD"), Errc::Parse);
}

// ---- distances ----------------------------------------------------------------------

TEST_CASE("analytic sphere distances") {
  NavEngine e = navigating_engine();
  REQUIRE(e.state() == NavState::NAVIGATING);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Vec3 dir = testing::random_unit(rng);
    CHECK(std::abs(e.shortest_distance(25.0 * dir) - 10.0) <= 0.25);
    CHECK(std::abs(e.shortest_distance(20.0 * dir) - 5.0) <= 0.25);
    CHECK(std::abs(e.shortest_distance(10.0 * dir) + 5.0) <= 0.25);
  }
  CHECK(std::abs(e.shortest_distance(Vec3::Zero()) + 15.0) <= 0.5);
  CHECK_ERRC(e.shortest_distance(Vec3(std::nan(""), 0, 0)), Errc::InvalidPoint);
}

TEST_CASE("mesh distance matches the brute-force vertex minimum on 1000 points") {
  NavEngine e = navigating_engine();
  const SurfaceMesh& mesh = sphere_tumor()->mesh;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-60.0, 60.0);
  int tested = 0;
  double worst = 0.0;
  while (tested < 1000) {
    const Vec3 p(u(rng), u(rng), u(rng));
    if (p.norm() < 15.0 + 0.5) continue;  // at least one voxel outside
    const double d = e.shortest_distance(p);
    const double brute = min_vertex_distance(mesh, p);
    const double err = std::abs(d - brute);
    CHECK(err <= std::max(0.25, 0.01 * brute));
    worst = std::max(worst, err);
    ++tested;
  }
  MESSAGE("worst deviation " << worst << " mm");
}

TEST_CASE("distance queries need NAVIGATING") {
  NavEngine e;
  CHECK_ERRC(e.shortest_distance(Vec3::Zero()), Errc::NotNavigating);
  e.set_tumor_model(sphere_tumor());
  CHECK(e.state() == NavState::SETUP);
  CHECK_ERRC(e.shortest_distance(Vec3::Zero()), Errc::NotNavigating);
}

// ---- state machine ------------------------------------------------------------------

TEST_CASE("state transitions") {
  NavEngine e;
  CHECK(e.state() == NavState::SETUP);
  e.update_pose(sample(Device::REFERENCE, Pose::identity(), 0.0, 1));
  CHECK(e.state() == NavState::SETUP);  // no tumor yet
  e.set_tumor_model(sphere_tumor());
  CHECK(e.state() == NavState::NAVIGATING);

  // reference missing for 1 s at 60 Hz
  std::uint64_t seq = 1;
  double lost_at = -1.0;
  for (int i = 1; i <= 60; ++i) {
    const double t = i / 60.0;
    const SceneDelta d = e.update_pose({Device::REFERENCE, Pose::missing(t), ++seq});
    if (d.state_changed && d.state == NavState::LOST) lost_at = t;
  }
  CHECK(e.state() == NavState::LOST);
  REQUIRE(lost_at > 0.0);
  CHECK(lost_at - 1.0 / 60.0 > 0.5);
  CHECK(lost_at - 1.0 / 60.0 <= 0.5 + 1.0 / 60.0 + 1e-9);

  const SceneDelta back = e.update_pose(sample(Device::REFERENCE, Pose::identity(), 1.1, ++seq));
  CHECK(back.state_changed);
  CHECK(e.state() == NavState::NAVIGATING);
}

TEST_CASE("a short dropout does not lose navigation") {
  NavEngine e = navigating_engine();
  std::uint64_t seq = 1;
  for (int i = 1; i <= 20; ++i) e.update_pose({Device::REFERENCE, Pose::missing(i / 60.0), ++seq});
  CHECK(e.state() == NavState::NAVIGATING);
  e.update_pose(sample(Device::REFERENCE, Pose::identity(), 0.4, ++seq));
  for (int i = 1; i <= 20; ++i) e.update_pose({Device::REFERENCE, Pose::missing(0.4 + i / 60.0), ++seq});
  CHECK(e.state() == NavState::NAVIGATING);
}

TEST_CASE("pointer samples land in the delta with the tip offset applied") {
  NavConfig cfg;
  cfg.tip_offsets[Device::POINTER] = Pose::from_translation(Vec3(0, 0, 150));
  NavEngine e = navigating_engine(cfg);
  const Pose sensor = Pose::from_translation(Vec3(0, 0, -150 + 26));
  const SceneDelta d = e.update_pose(sample(Device::POINTER, sensor, 0.1, 1));
  REQUIRE(d.instrument);
  CHECK(d.instrument->device == Device::POINTER);
  CHECK((d.instrument->tip.translation() - Vec3(0, 0, 26)).norm() < 1e-12);
  REQUIRE(d.instrument->distance_mm);
  CHECK(std::abs(*d.instrument->distance_mm - 11.0) <= 0.25);
  CHECK(d.instrument->tip.frame() == FrameId::REFERENCE);
  CHECK(e.alert() == Alert::NEAR_MARGIN);
}

TEST_CASE("instrument poses are discarded while the reference is missing") {
  NavEngine e = navigating_engine();
  e.update_pose(sample(Device::SEALER, Pose::from_translation(Vec3(30, 0, 0)), 0.01, 1));
  CHECK(e.instrument(Device::SEALER));
  e.update_pose({Device::REFERENCE, Pose::missing(0.02), 2});
  CHECK_FALSE(e.instrument(Device::SEALER));
  const SceneDelta d = e.update_pose(sample(Device::SEALER, Pose::from_translation(Vec3(30, 0, 0)), 0.03, 2));
  CHECK_FALSE(d.instrument);
}

TEST_CASE("unknown devices are rejected") {
  NavConfig cfg;
  cfg.devices = {Device::REFERENCE, Device::POINTER};
  NavEngine e(cfg);
  CHECK_ERRC(e.update_pose(sample(Device::PROBE, Pose::identity(), 0.0, 1)), Errc::UnknownDevice);
  cfg.devices = {Device::POINTER};
  CHECK_ERRC(NavEngine{cfg}, Errc::InvalidArgument);
}

TEST_CASE("alert follows the closest of sealer and pointer") {
  NavEngine e = navigating_engine();
  e.update_pose(sample(Device::POINTER, Pose::from_translation(Vec3(40, 0, 0)), 0.01, 1));
  CHECK(e.alert() == Alert::CLEAR);
  e.update_pose(sample(Device::SEALER, Pose::from_translation(Vec3(0, 23, 0)), 0.02, 1));
  CHECK(e.alert() == Alert::INSIDE_MARGIN);
  e.set_margin(5.0);
  CHECK(e.alert() == Alert::NEAR_MARGIN);  // d ~ 8: past 5 + 2, short of 5 + 4
  CHECK_ERRC(e.set_margin(0.0), Errc::InvalidArgument);
  // probe distance is not an instrument alert
  e.update_pose(sample(Device::PROBE, Pose::from_translation(Vec3(0, 0, 16)), 0.03, 1));
  CHECK(e.alert() == Alert::NEAR_MARGIN);
}

TEST_CASE("compensation invariance over a random world motion stream") {
  NavConfig cfg;
  cfg.tip_offsets[Device::POINTER] = Pose::from_translation(Vec3(0, 0, 150));
  cfg.tip_offsets[Device::SEALER] = Pose::from_translation(Vec3(0, 0, 200));
  NavEngine still(cfg), moved(cfg);
  still.set_tumor_model(sphere_tumor());
  moved.set_tumor_model(sphere_tumor());

  std::mt19937_64 rng(42);
  const Pose ref = Pose::from_axis_angle(Vec3(1, 2, 3), 0.4, Vec3(10, -20, 30));
  double worst = 0.0;
  std::uint64_t seq = 0;
  for (int i = 0; i < 1000; ++i) {
    const double t = i / 60.0;
    const Pose world = testing::random_pose(rng, 0.0, 300.0);
    const Device dev = i % 2 ? Device::POINTER : Device::SEALER;
    const Pose instr = compose(ref, compose(Pose::from_axis_angle(testing::random_unit(rng), 0.3,
                                                                  Vec3(0, 0, 0)),
                                            Pose::from_translation(Vec3(0, 0, -150) + 30.0 * testing::random_unit(rng))));
    ++seq;
    still.update_pose(sample(Device::REFERENCE, ref, t, seq));
    moved.update_pose(sample(Device::REFERENCE, compose(world, ref), t, seq));
    const SceneDelta a = still.update_pose(sample(dev, instr, t, seq));
    const SceneDelta b = moved.update_pose(sample(dev, compose(world, instr), t, seq));
    REQUIRE(a.instrument);
    REQUIRE(b.instrument);
    worst = std::max(worst, std::abs(*a.instrument->distance_mm - *b.instrument->distance_mm));
    CHECK(a.alert == b.alert);
  }
  CHECK(worst <= 1e-6);
}

// ---- clips --------------------------------------------------------------------------

TEST_CASE("clip digitization") {
  NavEngine e = navigating_engine();
  std::mt19937_64 rng(5);
  for (int i = 1; i <= 5; ++i) {
    const Vec3 p = 20.0 * testing::random_unit(rng);
    const ClipRecord c = e.digitize_clip(p, 0.1 * i);
    CHECK(c.id == i);
    CHECK(std::abs(c.intraop_distance - 5.0) <= 0.25);
    CHECK(std::abs(c.intraop_distance - sphere_tumor()->signed_distance(c.position)) <= 1e-6);
  }
  CHECK(e.clips().size() == 5);

  // pointer-based digitization uses the current tip
  e.update_pose(sample(Device::POINTER, Pose::from_translation(Vec3(0, -21, 0)), 1.0, 1));
  const ClipRecord c6 = e.digitize_clip_at_pointer(1.0);
  CHECK(c6.id == 6);
  CHECK((c6.position - Vec3(0, -21, 0)).norm() < 1e-12);
}

TEST_CASE("clips are rejected while LOST") {
  NavEngine e = navigating_engine();
  e.update_pose(sample(Device::POINTER, Pose::from_translation(Vec3(0, 20, 0)), 0.01, 1));
  std::uint64_t seq = 1;
  for (int i = 1; i <= 60; ++i) e.update_pose({Device::REFERENCE, Pose::missing(i / 60.0), ++seq});
  REQUIRE(e.state() == NavState::LOST);
  CHECK_ERRC(e.digitize_clip_at_pointer(1.0), Errc::NotNavigating);
  CHECK_ERRC(e.digitize_clip(Vec3(0, 20, 0), 1.0), Errc::NotNavigating);
  CHECK(e.clips().empty());
}

TEST_CASE("digitizing without a pointer pose reports POSE_MISSING") {
  NavEngine e = navigating_engine();
  CHECK_ERRC(e.digitize_clip_at_pointer(0.5), Errc::PoseMissing);
}

// ---- publishing -----------------------------------------------------------------------

TEST_CASE("LOST scene carries no instruments") {
  NavEngine e = navigating_engine();
  e.update_pose(sample(Device::POINTER, Pose::from_translation(Vec3(0, 20, 0)), 0.01, 1));
  CHECK(e.snapshot().instruments.size() == 1);
  std::uint64_t seq = 1;
  for (int i = 1; i <= 60; ++i) e.update_pose({Device::REFERENCE, Pose::missing(i / 60.0), ++seq});
  ScenePublisher pub;
  const auto msg = pub.maybe_publish(e.snapshot());
  REQUIRE(msg);
  CHECK(msg->kind == MessageKind::SCENE_UPDATE);
  const json j = json::parse(msg->payload);
  CHECK(j["state"] == "LOST");
  CHECK(j["instruments"].empty());
}

TEST_CASE("scene updates: clips, mesh deltas and rate limit") {
  NavEngine e = navigating_engine();
  ScenePublisher pub(30.0);
  e.update_pose(sample(Device::POINTER, Pose::from_translation(Vec3(0, 20, 0)), 0.02, 1));

  auto first = pub.maybe_publish(e.snapshot());
  REQUIRE(first);
  json j = json::parse(first->payload);
  CHECK(j["meshes"].contains("tumor"));
  CHECK(j["meshes"].contains("margin"));
  CHECK(j["instruments"][0]["device"] == "POINTER");
  CHECK(std::abs(j["instruments"][0]["distance_mm"].get<double>() - 5.0) <= 0.25);
  CHECK(j["margin_mm"] == 10.0);

  // too soon
  e.update_pose(sample(Device::POINTER, Pose::from_translation(Vec3(0, 21, 0)), 0.03, 2));
  CHECK_FALSE(pub.maybe_publish(e.snapshot()));

  e.digitize_clip_at_pointer(0.03);
  e.update_pose(sample(Device::POINTER, Pose::from_translation(Vec3(0, 22, 0)), 0.06, 3));
  auto second = pub.maybe_publish(e.snapshot());
  REQUIRE(second);
  j = json::parse(second->payload);
  REQUIRE(j["clips"].size() == 1);
  CHECK(j["clips"][0]["id"] == 1);
  CHECK_FALSE(j.contains("meshes"));

  e.set_margin(7.0);
  auto forced = pub.maybe_publish(e.snapshot(), true);
  REQUIRE(forced);
  j = json::parse(forced->payload);
  CHECK(j["meshes"].contains("margin"));
  CHECK_FALSE(j["meshes"].contains("tumor"));
  CHECK(j["margin_mm"] == 7.0);

  pub.reset_meshes();
  j = json::parse(pub.maybe_publish(e.snapshot(), true)->payload);
  CHECK(j["meshes"].contains("tumor"));
}

TEST_CASE("registered liver is published as context only") {
  NavEngine e = navigating_engine();
  PreopModel preop;
  preop.liver = make_ellipsoid_mesh(Vec3::Zero(), Vec3(60, 40, 30), 8, 12, LabelKind::LIVER, FrameId::PREOP_MODEL);
  CHECK_ERRC(e.set_preop(preop), Errc::InvalidArgument);
  e.set_preop(apply_registration(preop, Vec3(1, 2, 3)));
  ScenePublisher pub;
  const json j = json::parse(pub.maybe_publish(e.snapshot())->payload);
  REQUIRE(j["meshes"].contains("liver"));
  CHECK(j["meshes"]["liver"]["context_only"] == true);
  CHECK(j["meshes"]["liver"]["vertices"].size() == 3 * preop.liver.vertices.size());
}

// ---- sessions ---------------------------------------------------------------------------

namespace {

// 10 s at 60 Hz: reference swaying, pointer circling the tumor, five clips,
// a margin change, and a reference dropout long enough to lose navigation.
SessionRecord simulated_session(std::vector<StepOutput>* steps = nullptr) {
  NavConfig cfg;
  cfg.tip_offsets[Device::POINTER] = Pose::from_translation(Vec3(0, 0, 150));
  NavEngine e(cfg);
  e.set_tumor_model(sphere_tumor());
  SessionDriver drv(e);
  std::vector<TrackedSample> samples;
  std::uint64_t seq = 0;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (int i = 0; i <= 600; ++i) {
    const double t = i / 60.0;
    const Pose ref = Pose::from_axis_angle(Vec3(0, 0, 1), 0.05 * std::sin(t), Vec3(3 * std::sin(1.3 * t), 0, 50));
    ++seq;
    samples.push_back({Device::REFERENCE, (t >= 6.0 && t < 7.0) ? Pose::missing(t) : ref.with_timestamp(t), seq});
    const double a = 0.6 * t;
    const Vec3 tip(22 * std::cos(a), 22 * std::sin(a), 2 * std::sin(3 * a));
    const Pose sensor_in_ref = Pose::from_translation(tip + Vec3(noise(rng), noise(rng), noise(rng)) - Vec3(0, 0, 150));
    samples.push_back({Device::POINTER, compose(ref, sensor_in_ref).with_timestamp(t), seq});
  }
  std::vector<NavCommand> cmds;
  for (double t : {1.0, 2.0, 3.0, 4.0, 5.0, 6.8, 8.0}) cmds.push_back({NavCommand::Kind::DigitizeClip, t, 0.0});
  cmds.push_back({NavCommand::Kind::SetMargin, 2.5, 5.0});
  for (const auto& ev : merge_events(samples, cmds)) {
    const StepOutput o = drv.apply(ev);
    if (steps) steps->push_back(o);
  }
  SessionRecord r = drv.record();
  r.tumor_mask_path = "seg/tumor.json";
  return r;
}

}  // namespace

TEST_CASE("merge_events applies a command after samples stamped at or before it") {
  std::vector<TrackedSample> s;
  for (int i = 0; i < 4; ++i) s.push_back({Device::PROBE, Pose::identity(i * 1.0), static_cast<std::uint64_t>(i + 1)});
  const auto ev = merge_events(s, {{NavCommand::Kind::DigitizeClip, 2.0, 0}, {NavCommand::Kind::SetMargin, 0.5, 7}});
  REQUIRE(ev.size() == 6);
  CHECK(ev[1].command);
  CHECK(ev[1].command->kind == NavCommand::Kind::SetMargin);
  CHECK(ev[3].sample->pose.timestamp() == 2.0);
  CHECK(ev[4].command);
  CHECK(ev[4].command->kind == NavCommand::Kind::DigitizeClip);
}

TEST_CASE("a simulated session digitizes clips and rejects the one during LOST") {
  std::vector<StepOutput> steps;
  const SessionRecord r = simulated_session(&steps);
  CHECK(r.clips.size() == 6);
  for (std::size_t i = 0; i < r.clips.size(); ++i) {
    CHECK(r.clips[i].id == static_cast<int>(i + 1));
    CHECK(std::abs(r.clips[i].intraop_distance - sphere_tumor()->signed_distance(r.clips[i].position)) <= 1e-6);
  }
  std::size_t rejected = 0;
  bool saw_lost = false;
  for (const auto& s : steps) {
    saw_lost |= s.state == NavState::LOST;
    if (s.error) {
      CHECK(*s.error == Errc::NotNavigating);
      ++rejected;
    }
  }
  CHECK(saw_lost);
  CHECK(rejected == 1);
}

TEST_CASE("session files round-trip and replay reproduces every step") {
  std::vector<StepOutput> steps;
  const SessionRecord r = simulated_session(&steps);
  const std::string text = format_session(r);
  const SessionRecord back = parse_session(text);
  CHECK(back.events == r.events);
  CHECK(back.clips == r.clips);
  CHECK(back.tumor_mask_path == r.tumor_mask_path);
  CHECK(format_session(back) == text);

  std::vector<ClipRecord> clips;
  const auto replayed = replay_session(back, sphere_tumor(), &clips);
  CHECK(replayed == steps);
  CHECK(clips == r.clips);
  std::vector<ClipRecord> again;
  CHECK(replay_session(back, sphere_tumor(), &again) == replayed);
  CHECK(again == clips);

  testing::TempDir dir("session");
  save_session(r, dir / "s.jsonl");
  CHECK(load_session(dir / "s.jsonl").events == r.events);
  save_clips(r.clips, dir / "clips.json");
  CHECK(load_clips(dir / "clips.json") == r.clips);
}

TEST_CASE("truncated or corrupted sessions report the byte offset") {
  const std::string text = format_session(simulated_session());
  const std::size_t cut = text.size() / 2;
  const std::size_t line_start = text.rfind('\n', cut - 1) + 1;
  try {
    parse_session(std::string_view(text).substr(0, cut));
    FAIL("expected PARSE");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Parse);
    CHECK(std::string(e.what()).find("session byte " + std::to_string(line_start)) != std::string::npos);
  }

  // whole lines missing: the end marker is gone
  const std::string head = text.substr(0, line_start);
  try {
    parse_session(head);
    FAIL("expected PARSE");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("session byte " + std::to_string(head.size())) != std::string::npos);
  }

  std::string bad = text;
  bad[line_start + 2] = '#';
  CHECK_ERRC(parse_session(bad), Errc::Parse);
  CHECK_ERRC(parse_session(""), Errc::Parse);
}
