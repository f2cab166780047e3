// Headless acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "usnav/error.hpp"
#include "usnav/evalkit.hpp"
#include "usnav/mesh.hpp"
#include "usnav/navengine.hpp"
#include "usnav/segment.hpp"
#include "usnav/tracking.hpp"
#include "usnav/volume.hpp"
#include "usnav/workflow.hpp"

using namespace usnav;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return seconds_since(t0);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), {}};
}

double sphere_volume(double r) { return 4.0 / 3.0 * std::numbers::pi * r * r * r; }

struct Workspace {
  fs::path root;
  fs::path main, detached;
  double t_reconstruct = 0.0, t_segment = 0.0, t_register = 0.0, t_total = 0.0;
  Scenario scenario;
  AccuracyReport report;
  NavigateResult nav_detached;
  double detach_at = 5.0;
  double rate_hz = 60.0;
};

void run_stages(const fs::path& dir, SimulateOptions sim, Workspace* timing) {
  sim.dir = dir.string();
  run_simulate(sim);
  const double rec = timed([&] { run_reconstruct({dir.string()}); });
  SegmentOptions seg;
  seg.dir = dir.string();
  const double sg = timed([&] { run_segment(seg); });
  const double rg = timed([&] { run_register({dir.string()}); });
  if (timing) {
    timing->t_reconstruct = rec;
    timing->t_segment = sg;
    timing->t_register = rg;
  }
}

// ---- criteria -------------------------------------------------------------------

Outcome end_to_end(Workspace& w) {
  const double median = w.report.per_clip.stats.median;
  const bool ok = median <= 1.0 && w.t_total <= 300.0 && w.report.clips.size() == w.scenario.clips.size();
  return {ok, fmt("median |delta| %.3f mm over %.0f clips (IQR %.3f), runtime %.1f s", median,
                  static_cast<double>(w.report.clips.size()), w.report.per_clip.stats.iqr, w.t_total)};
}

Outcome compensation(const Workspace& w) {
  const auto tumor = TumorModel::build(load_mask((w.main / "seg" / "tumor.json").string()));
  NavConfig cfg;
  cfg.tip_offsets[Device::POINTER] = Pose::from_translation(Vec3(0, 0, 150));
  cfg.tip_offsets[Device::SEALER] = Pose::from_translation(Vec3(0, 0, 200));
  NavEngine still(cfg), moved(cfg);
  still.set_tumor_model(tumor);
  moved.set_tumor_model(tumor);

  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-300.0, 300.0);
  const auto random_pose = [&] {
    Quat q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return Pose(q, Vec3(u(rng), u(rng), u(rng)), 0.0);
  };
  const auto unit = [&] { return Vec3(n(rng), n(rng), n(rng)).normalized(); };

  const Pose ref = Pose::from_axis_angle(Vec3(1, 2, 3), 0.4, Vec3(10, -20, 30));
  ScenePublisher pa(1e9), pb(1e9);
  double worst = 0.0;
  std::size_t compared = 0;
  for (int i = 0; i < 1000; ++i) {
    const double t = i / 60.0;
    const std::uint64_t seq = static_cast<std::uint64_t>(i + 1);
    const Pose world = random_pose();
    const Device dev = i % 2 ? Device::POINTER : Device::SEALER;
    const double offset = dev == Device::POINTER ? 150.0 : 200.0;
    const Pose instr = compose(ref, compose(Pose::from_axis_angle(unit(), 0.3, Vec3::Zero()),
                                            Pose::from_translation(Vec3(0, 0, -offset) + 25.0 * unit())));
    still.update_pose({Device::REFERENCE, ref.with_timestamp(t), seq});
    moved.update_pose({Device::REFERENCE, compose(world, ref).with_timestamp(t), seq});
    still.update_pose({dev, instr.with_timestamp(t), seq});
    moved.update_pose({dev, compose(world, instr).with_timestamp(t), seq});
    const json a = json::parse(pa.maybe_publish(still.snapshot())->payload);
    const json b = json::parse(pb.maybe_publish(moved.snapshot())->payload);
    if (a["instruments"].size() != b["instruments"].size()) return {false, "instrument sets differ"};
    for (std::size_t k = 0; k < a["instruments"].size(); ++k) {
      worst = std::max(worst, std::abs(a["instruments"][k]["distance_mm"].get<double>() -
                                       b["instruments"][k]["distance_mm"].get<double>()));
      ++compared;
    }
    if (a["alert"] != b["alert"]) return {false, "alerts differ"};
  }
  return {worst <= 1e-6 && compared >= 1000,
          fmt("max published distance change %.3g mm over %.0f distances", worst, static_cast<double>(compared))};
}

Outcome distance_oracle(const Workspace& w) {
  const LabelMask mask = load_mask((w.main / "seg" / "tumor.json").string());
  const auto tumor = TumorModel::build(mask);
  NavEngine e;
  e.set_tumor_model(tumor);
  e.update_pose({Device::REFERENCE, Pose::identity(0.0), 1});
  const Vec3 c = centroid(mask);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-45.0, 45.0);
  double worst_excess = -1e9, worst = 0.0;
  int tested = 0;
  while (tested < 1000) {
    const Vec3 p = c + Vec3(u(rng), u(rng), u(rng));
    if (tumor->signed_distance(p) < mask.geom.spacing) continue;  // at least one voxel outside
    const double brute = min_vertex_distance(tumor->mesh, p);
    const double err = std::abs(e.shortest_distance(p) - brute);
    worst = std::max(worst, err);
    worst_excess = std::max(worst_excess, err - std::max(0.25, 0.01 * brute));
    ++tested;
  }
  return {worst_excess <= 0.0, fmt("1000 points, max error %.4f mm", worst)};
}

Outcome segmentation(const Workspace& w) {
  const LabelMask seg = load_mask((w.main / "seg" / "tumor.json").string());
  const LabelMask truth =
      analytic_sphere_mask(seg.geom, w.scenario.tumor_center, w.scenario.tumor_radius_mm, LabelKind::TUMOR);
  const double d = dice(seg, truth);
  const double off = (centroid(seg) - w.scenario.tumor_center).norm();
  return {d >= 0.95 && off <= 1.0, fmt("Dice %.4f, centroid offset %.3f mm", d, off)};
}

Outcome margin() {
  GridGeometry g;
  g.origin = Vec3::Constant(-30.0);
  g.spacing = 0.5;
  g.dims = {121, 121, 121};
  const LabelMask m = analytic_sphere_mask(g, Vec3::Zero(), 10.0, LabelKind::TUMOR);
  const DistanceField sdf = distance_field(m);
  bool ok = true;
  std::ostringstream detail;
  for (double mm : {5.0, 7.0, 10.0}) {
    const MarginResult r = expand_margin(m, sdf, mm);
    const double rel = (r.mask.volume_mm3() - sphere_volume(10.0 + mm)) / sphere_volume(10.0 + mm);
    ok &= std::abs(rel) <= 0.05 && !r.clipped;
    detail << (mm == 5.0 ? "" : ", ") << mm << " mm " << fmt("%+.2f%%", 100.0 * rel);
  }
  return {ok, "r=10 sphere: " + detail.str()};
}

Outcome loss_of_navigation(const Workspace& w) {
  const NavigateResult& r = w.nav_detached;
  if (!r.lost_at) return {false, "engine never entered LOST"};
  const double delay = *r.lost_at - w.detach_at;
  const double bound = 0.5 + 1.0 / w.rate_hz;
  std::size_t after = 0;
  for (const auto& c : w.scenario.clips) after += c.command_time >= *r.lost_at;
  const bool ok = delay <= bound + 1e-9 && delay > 0.0 && r.clips.empty() && r.rejected_clips == after && after > 0;
  return {ok, fmt("LOST %.4f s after detachment (bound %.4f s), %.0f of %.0f clip requests rejected", delay, bound,
                  static_cast<double>(r.rejected_clips), static_cast<double>(after))};
}

double oracle_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double f = h - static_cast<double>(lo);
  return (1.0 - f) * v[lo] + f * v[hi];
}

Outcome statistics() {
  std::mt19937_64 rng(78);
  std::lognormal_distribution<double> mag(std::log(3.3), 0.6);
  std::vector<PatientInput> cohort;
  std::vector<double> deltas, means;
  const int counts[16] = {5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 4, 4};
  for (int p = 0; p < 16; ++p) {
    PatientInput in;
    in.patient_id = "P" + std::string(p < 9 ? "0" : "") + std::to_string(p + 1);
    double sum = 0.0;
    for (int k = 0; k < counts[p]; ++k) {
      const double d = std::min(mag(rng), 5.9);
      const double a = 1.0 + 12.0 * k;
      in.intraop.push_back({k + 1, Vec3::Zero(), a, 0.0});
      in.postop.push_back(rng() % 2 ? a + d : a - d);
      deltas.push_back(std::abs(in.postop.back() - a));
      sum += deltas.back();
    }
    means.push_back(sum / counts[p]);
    std::shuffle(in.postop.begin(), in.postop.end(), rng);
    cohort.push_back(std::move(in));
  }
  const AccuracyReport r = accuracy_report(cohort);
  double worst = 0.0;
  const auto cmp = [&](double got, const std::vector<double>& v, double q) {
    worst = std::max(worst, std::abs(got - oracle_quantile(v, q)));
  };
  cmp(r.per_clip.stats.median, deltas, 0.5);
  cmp(r.per_clip.stats.q1, deltas, 0.25);
  cmp(r.per_clip.stats.q3, deltas, 0.75);
  cmp(r.per_patient.stats.median, means, 0.5);
  cmp(r.per_patient.stats.q1, means, 0.25);
  cmp(r.per_patient.stats.q3, means, 0.75);
  const bool ok = worst <= 1e-9 && r.clips.size() == 78 && r.patients.size() == 16;
  return {ok, fmt("16 patients, %.0f clips, per-clip median %.3f mm, max deviation from oracle %.3g",
                  static_cast<double>(r.clips.size()), r.per_clip.stats.median, worst)};
}

Outcome performance(const Workspace& w) {
  const double setup = w.t_register + w.t_reconstruct + w.t_segment;
  return {w.t_reconstruct <= 67.0 && setup <= 600.0,
          fmt("reconstruction %.2f s (budget 67 s), setup %.2f s (budget 600 s)", w.t_reconstruct, setup)};
}

Outcome round_trips(const Workspace& w) {
  std::vector<std::string> bad;
  const fs::path scratch = w.root / "roundtrip";
  fs::create_directories(scratch);

  const std::string log_bytes = slurp(w.main / "tracking.log");
  std::ostringstream log_out;
  write_log(read_log_file((w.main / "tracking.log").string()), log_out);
  if (log_out.str() != log_bytes) bad.push_back("tracking log");

  const auto same_files = [&](const fs::path& a, const fs::path& b, const char* what) {
    for (const char* ext : {".json", ".raw", ".weight.raw"}) {
      const fs::path pa = a.string() + ext, pb = b.string() + ext;
      if (fs::exists(pa) != fs::exists(pb) || (fs::exists(pa) && slurp(pa) != slurp(pb))) {
        bad.push_back(what);
        return;
      }
    }
  };
  save_volume(load_volume((w.main / "recon" / "volume.json").string()), (scratch / "volume.json").string());
  same_files(w.main / "recon" / "volume", scratch / "volume", "volume");
  save_mask(load_mask((w.main / "seg" / "tumor.json").string()), (scratch / "tumor.json").string());
  same_files(w.main / "seg" / "tumor", scratch / "tumor", "mask");

  for (const char* name : {"tumor.mesh", "vessel.mesh"}) {
    const std::string bytes = slurp(w.main / "seg" / name);
    const SurfaceMesh m = parse_mesh(bytes);
    if (format_mesh(m) != bytes || !(parse_mesh(format_mesh(m)) == m)) bad.push_back(name);
  }

  const fs::path session = w.main / "nav" / "session.jsonl";
  if (format_session(load_session(session.string())) != slurp(session)) bad.push_back("session");
  const ReplayResult rep = run_replay({session.string(), ""});
  if (!rep.identical) bad.push_back("replayed clips");

  std::string detail = "log, volume, mask, meshes, session byte-identical; replay of " + std::to_string(rep.events) +
                       " events gives " + std::to_string(rep.clips.size()) + " identical clips";
  if (!bad.empty()) {
    detail = "mismatch:";
    for (const auto& b : bad) detail += " " + b;
  }
  return {bad.empty(), detail};
}

}  // namespace

int main() {
  Workspace w;
  w.root = fs::temp_directory_path() / ("usnav_acceptance_" + std::to_string(std::random_device{}()));
  w.main = w.root / "main";
  w.detached = w.root / "detached";
  fs::create_directories(w.root);

  std::string setup_error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    SimulateOptions sim;
    sim.tumor_radius_mm = 15.0;
    sim.spacing_mm = 0.5;
    sim.rate_hz = w.rate_hz;
    sim.clips = 12;
    run_stages(w.main, sim, &w);
    NavigateOptions nav;
    nav.dir = w.main.string();
    run_navigate(nav);
    w.report = run_evaluate({(w.main / "cohort").string(), (w.main / "report").string()});
    w.t_total = seconds_since(t0);
    w.scenario = load_scenario((w.main / "scenario.json").string());

    sim.detach_at = w.detach_at;
    run_stages(w.detached, sim, nullptr);
    nav.dir = w.detached.string();
    w.nav_detached = run_navigate(nav);
  } catch (const std::exception& e) {
    setup_error = e.what();
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"end-to-end accuracy", [&] { return end_to_end(w); }},
      {"compensation invariance", [&] { return compensation(w); }},
      {"distance oracle", [&] { return distance_oracle(w); }},
      {"segmentation fidelity", [&] { return segmentation(w); }},
      {"margin correctness", [] { return margin(); }},
      {"loss of navigation", [&] { return loss_of_navigation(w); }},
      {"statistics oracle", [] { return statistics(); }},
      {"performance budgets", [&] { return performance(w); }},
      {"round trips and replay", [&] { return round_trips(w); }},
  };

  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      if (!setup_error.empty() && name != std::string("margin correctness") && name != std::string("statistics oracle"))
        throw Error(Errc::Io, "pipeline failed: " + setup_error);
      o = check();
    } catch (const std::exception& e) {
      o = {false, e.what()};
    }
    failed += !o.pass;
    std::printf("%s %-26s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }

  std::error_code ec;
  fs::remove_all(w.root, ec);
  return failed == 0 ? 0 : 1;
}
