// usnav: command-line driver for the navigation workflow.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>

#include "usnav/error.hpp"
#include "usnav/workflow.hpp"

namespace {

using namespace usnav;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

int exit_code(Errc c) {
  switch (c) {
    case Errc::Parse:
    case Errc::InvalidArgument:
    case Errc::Io:
    case Errc::UnknownDevice:
    case Errc::InvalidPoint:
    case Errc::SeedConflict:
    case Errc::Order:
    case Errc::EmptyCohort:
    case Errc::NoClips:
      return 2;
    default:
      return 3;
  }
}

class StageTimer {
 public:
  explicit StageTimer(std::string name) : name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  double stop() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::printf("[time] %-12s %8.2f s\n", name_.c_str(), s);
    std::fflush(stdout);
    return s;
  }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

void print_vec(const char* label, const Vec3& v) {
  std::printf("%s (%.3f, %.3f, %.3f)\n", label, v.x(), v.y(), v.z());
}

struct Args {
  std::string dir = "usnav_work";
  std::uint64_t seed = 1;
  double spacing = kDefaultVoxelSpacingMm;
  double margin = 10.0;
  double tumor_radius = 15.0;
  double rate_hz = 60.0;
  double noise_rot = TrackerNoise{}.rot_deg;
  double noise_trans = TrackerNoise{}.trans_mm;
  std::optional<double> detach_at;
  int clips = 5;
  int detached_clips = 0;
  double tolerance = 60.0;
  double hole_radius = kDefaultHoleFillRadiusMm;
  double t_lost = kDefaultTLostS;
  double hysteresis = kDefaultHysteresisMm;
  double publish_rate = kDefaultPublishRateHz;
  std::optional<std::uint16_t> port;
  std::optional<std::uint16_t> ws_port;
  double speed = 1.0;
  bool hold = false;
  std::string cohort;
  std::string out;
  std::string session;
  std::string tumor;
};

void run_simulate_stage(const Args& a) {
  std::printf("simulate: seed %llu, tumor radius %.2f mm, spacing %.3f mm\n",
              static_cast<unsigned long long>(a.seed), a.tumor_radius, a.spacing);
  StageTimer t("simulate");
  SimulateOptions o;
  o.dir = a.dir;
  o.seed = a.seed;
  o.spacing_mm = a.spacing;
  o.tumor_radius_mm = a.tumor_radius;
  o.rate_hz = a.rate_hz;
  o.noise = {a.noise_rot, a.noise_trans};
  o.detach_at = a.detach_at;
  o.clips = a.clips;
  o.detached_clips = a.detached_clips;
  const SimulateResult r = run_simulate(o);
  std::printf("  %zu tracked samples, %zu frames, tumor mask %.1f mm3 (analytic %.1f mm3)\n", r.samples, r.frames,
              r.tumor_mask_volume_mm3, r.tumor_analytic_volume_mm3);
  t.stop();
}

double run_reconstruct_stage(const Args& a) {
  StageTimer t("reconstruct");
  const ReconstructResult r = run_reconstruct({a.dir, a.spacing, a.hole_radius});
  std::printf("  %zu frames compounded (%zu dropped), grid %dx%dx%d, holes %zu -> %zu\n", r.frames, r.dropped,
              r.geom.dims[0], r.geom.dims[1], r.geom.dims[2], r.holes_before, r.holes_after);
  return t.stop();
}

double run_segment_stage(const Args& a) {
  StageTimer t("segment");
  SegmentOptions o;
  o.dir = a.dir;
  o.tolerance = a.tolerance;
  o.margin_mm = a.margin;
  const SegmentResult r = run_segment(o);
  std::printf("  tumor %.1f mm3, vessel %.1f mm3%s\n", r.tumor_volume_mm3, r.vessel_volume_mm3,
              r.margin_clipped ? ", margin clipped by the volume" : "");
  print_vec("  tumor centroid", r.tumor_centroid);
  return t.stop();
}

double run_register_stage(const Args& a) {
  StageTimer t("register");
  const RegisterResult r = run_register({a.dir});
  print_vec("  translation", r.translation);
  return t.stop();
}

void run_navigate_stage(const Args& a) {
  StageTimer t("navigate");
  NavigateOptions o;
  o.dir = a.dir;
  o.margin_mm = a.margin;
  o.t_lost_s = a.t_lost;
  o.hysteresis_mm = a.hysteresis;
  o.publish_rate_hz = a.publish_rate;
  o.port = a.port;
  o.ws_port = a.ws_port;
  o.speed = a.speed;
  o.hold = a.hold;
  o.stop = &g_stop;
  o.log = [](const std::string& s) {
    std::printf("  %s\n", s.c_str());
    std::fflush(stdout);
  };
  const NavigateResult r = run_navigate(o);
  std::printf("  %zu events, %zu clips digitized, %zu rejected, %zu alert transitions\n", r.events, r.clips.size(),
              r.rejected_clips, r.alert_transitions);
  if (r.lost_at) std::printf("  navigation lost at t=%.3f s\n", *r.lost_at);
  for (const auto& c : r.clips) {
    std::printf("  clip %d at t=%.2f s: %.2f mm\n", c.id, c.timestamp, c.intraop_distance);
  }
  t.stop();
}

void run_evaluate_stage(const std::string& cohort, const std::string& out) {
  StageTimer t("evaluate");
  const AccuracyReport r = run_evaluate({cohort, out});
  std::cout << format_report_table(r);
  if (!out.empty()) std::printf("  report written to %s\n", out.c_str());
  t.stop();
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  Args a;
  CLI::App app{"usnav - ultrasound-based navigation workflow"};
  app.require_subcommand(1);

  auto add_dir = [&](CLI::App* c) { c->add_option("--dir", a.dir, "work directory")->capture_default_str(); };
  auto add_margin = [&](CLI::App* c) {
    c->add_option("--margin-mm", a.margin, "resection margin in mm (presets 5, 7, 10)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  };
  auto add_sim = [&](CLI::App* c) {
    c->add_option("--seed", a.seed, "random seed")->capture_default_str();
    c->add_option("--spacing-mm", a.spacing, "voxel spacing")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--tumor-radius", a.tumor_radius, "tumor radius in mm")->capture_default_str();
    c->add_option("--rate-hz", a.rate_hz, "tracker rate")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--noise-rot-deg", a.noise_rot, "tracker rotation noise sigma")->capture_default_str();
    c->add_option("--noise-trans-mm", a.noise_trans, "tracker translation noise sigma")->capture_default_str();
    c->add_option("--detach-at", a.detach_at, "reference sensor detaches at this time (s)");
    c->add_option("--clips", a.clips, "clips placed during navigation")->capture_default_str();
    c->add_option("--detached-clips", a.detached_clips, "clips missing from the specimen")->capture_default_str();
  };
  auto add_recon = [&](CLI::App* c) {
    c->add_option("--hole-radius-mm", a.hole_radius, "hole filling radius")->capture_default_str();
  };
  auto add_seg = [&](CLI::App* c) {
    c->add_option("--tolerance", a.tolerance, "region growing intensity tolerance")->capture_default_str();
  };
  auto add_nav = [&](CLI::App* c) {
    c->add_option("--port", a.port, "serve the scene stream on this TCP port (0 = any)");
    c->add_option("--ws-port", a.ws_port, "also bridge the stream to WebSocket clients on this port");
    c->add_option("--speed", a.speed, "live playback speed factor")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_flag("--hold", a.hold, "keep serving after playback until interrupted");
    c->add_option("--t-lost", a.t_lost, "reference loss timeout (s)")->capture_default_str();
    c->add_option("--hysteresis-mm", a.hysteresis, "alert hysteresis")->capture_default_str();
    c->add_option("--publish-hz", a.publish_rate, "scene update rate")->capture_default_str();
  };

  auto* sim = app.add_subcommand("simulate", "write phantom, tracking log, sweep frames and specimen");
  add_dir(sim);
  add_sim(sim);
  auto* rec = app.add_subcommand("reconstruct", "compound the tracked sweep into a volume");
  add_dir(rec);
  rec->add_option("--spacing-mm", a.spacing, "voxel spacing")->check(CLI::PositiveNumber)->capture_default_str();
  add_recon(rec);
  auto* seg = app.add_subcommand("segment", "segment tumor and vessels, expand the margin");
  add_dir(seg);
  add_seg(seg);
  add_margin(seg);
  auto* reg = app.add_subcommand("register", "align the preoperative model by the tumor centroid");
  add_dir(reg);
  auto* nav = app.add_subcommand("navigate", "run the navigation engine over the recorded stream");
  add_dir(nav);
  add_margin(nav);
  add_nav(nav);
  auto* eval = app.add_subcommand("evaluate", "clip-based accuracy report for a cohort");
  eval->add_option("--cohort", a.cohort, "cohort directory")->required();
  eval->add_option("--out", a.out, "report directory");
  auto* rep = app.add_subcommand("replay", "replay a recorded session and compare clip records");
  rep->add_option("--session", a.session, "session file")->required();
  rep->add_option("--tumor", a.tumor, "tumor mask (defaults to the one named in the session)");
  auto* pipe = app.add_subcommand("pipeline", "simulate, reconstruct, segment, register, navigate, evaluate");
  add_dir(pipe);
  add_sim(pipe);
  add_recon(pipe);
  add_seg(pipe);
  add_margin(pipe);
  add_nav(pipe);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      run_simulate_stage(a);
    } else if (*rec) {
      run_reconstruct_stage(a);
    } else if (*seg) {
      run_segment_stage(a);
    } else if (*reg) {
      run_register_stage(a);
    } else if (*nav) {
      run_navigate_stage(a);
    } else if (*eval) {
      run_evaluate_stage(a.cohort, a.out);
    } else if (*rep) {
      StageTimer t("replay");
      const ReplayResult r = run_replay({a.session, a.tumor});
      std::printf("  %zu events replayed, %zu clips, %s\n", r.events, r.clips.size(),
                  r.identical ? "identical to the recording" : "DIFFERENT from the recording");
      t.stop();
      return r.identical ? 0 : 3;
    } else if (*pipe) {
      StageTimer total("pipeline");
      run_simulate_stage(a);
      // Setup as in the operating room: registration inputs, acquisition and
      // segmentation; the preop model is registered once the tumor is segmented.
      double setup = run_reconstruct_stage(a);
      setup += run_segment_stage(a);
      setup += run_register_stage(a);
      std::printf("[time] %-12s %8.2f s\n", "setup", setup);
      run_navigate_stage(a);
      run_evaluate_stage(a.dir + "/cohort", a.dir + "/report");
      total.stop();
    }
  } catch (const usnav::Error& e) {
    std::fprintf(stderr, "usnav: %s\n", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "usnav: %s\n", e.what());
    return 3;
  }
  return 0;
}
