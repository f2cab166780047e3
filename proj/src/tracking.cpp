#include "usnav/tracking.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "usnav/detail/numtext.hpp"
#include "usnav/error.hpp"

namespace usnav {

using detail::format_double;
using detail::parse_double;
using json = nlohmann::json;

std::string_view to_string(Device d) {
  switch (d) {
    case Device::REFERENCE: return "REFERENCE";
    case Device::PROBE: return "PROBE";
    case Device::SEALER: return "SEALER";
    case Device::POINTER: return "POINTER";
  }
  return "REFERENCE";
}

Device device_from_string(std::string_view s) {
  for (Device d : kAllDevices) {
    if (to_string(d) == s) return d;
  }
  throw Error(Errc::UnknownDevice, "unknown device '" + std::string(s) + "'");
}

FrameId sensor_frame(Device d) {
  switch (d) {
    case Device::REFERENCE: return FrameId::REFERENCE;
    case Device::PROBE: return FrameId::PROBE_SENSOR;
    case Device::SEALER: return FrameId::SEALER_SENSOR;
    case Device::POINTER: return FrameId::POINTER_SENSOR;
  }
  return FrameId::WORLD;
}

namespace {

constexpr std::string_view kMagic = "#usnav-tracklog 1";

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& msg) {
  throw Error(Errc::Parse, "line " + std::to_string(line_no) + ": " + msg);
}

std::vector<double> parse_numbers(std::string_view text, std::size_t expected, std::size_t line_no) {
  const auto parts = detail::split(text, ',');
  if (parts.size() != expected) parse_fail(line_no, "expected " + std::to_string(expected) + " components");
  std::vector<double> out;
  for (auto p : parts) {
    auto v = parse_double(p);
    if (!v) parse_fail(line_no, "bad number '" + std::string(p) + "'");
    out.push_back(*v);
  }
  return out;
}

json pose_to_json(const Pose& p) {
  const auto& q = p.rotation();
  return json{{"q", {q.w(), q.x(), q.y(), q.z()}},
              {"p", {p.translation().x(), p.translation().y(), p.translation().z()}},
              {"frame", std::string(to_string(p.frame()))}};
}

Pose pose_from_json(const json& j) {
  const auto& q = j.at("q");
  const auto& p = j.at("p");
  return Pose(Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()),
              Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()), 0.0, TrackStatus::OK,
              frame_from_string(j.value("frame", std::string("WORLD"))));
}

std::string header_json(const LogHeader& h) {
  json j;
  j["version"] = h.version;
  j["rate_hz"] = h.rate_hz;
  j["devices"] = json::array();
  for (Device d : h.devices) j["devices"].push_back(std::string(to_string(d)));
  j["calibrations"] = json::object();
  for (const auto& [d, pose] : h.calibrations) j["calibrations"][std::string(to_string(d))] = pose_to_json(pose);
  return j.dump();
}

LogHeader header_from_json(std::string_view text, std::size_t line_no) {
  LogHeader h;
  try {
    const json j = json::parse(text);
    h.version = j.at("version").get<int>();
    h.rate_hz = j.at("rate_hz").get<double>();
    h.devices.clear();
    for (const auto& d : j.at("devices")) h.devices.push_back(device_from_string(d.get<std::string>()));
    for (const auto& [name, pose] : j.at("calibrations").items()) {
      h.calibrations[device_from_string(name)] = pose_from_json(pose);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    parse_fail(line_no, std::string("bad header: ") + e.what());
  }
  return h;
}

class OrderChecker {
 public:
  void check(const TrackedSample& s, std::size_t line_no) {
    auto it = last_.find(s.device);
    if (it != last_.end()) {
      if (s.sequence <= it->second.first) {
        throw Error(Errc::Order, "line " + std::to_string(line_no) + ": sequence not increasing for " +
                                     std::string(to_string(s.device)));
      }
      if (s.pose.timestamp() < it->second.second) {
        throw Error(Errc::Order, "line " + std::to_string(line_no) + ": time goes backwards for " +
                                     std::string(to_string(s.device)));
      }
    }
    last_[s.device] = {s.sequence, s.pose.timestamp()};
  }

 private:
  std::map<Device, std::pair<std::uint64_t, double>> last_;
};

}  // namespace

std::string format_record(const TrackedSample& s) {
  const auto& q = s.pose.rotation();
  const auto& p = s.pose.translation();
  std::string out;
  out.reserve(160);
  out += "t=" + format_double(s.pose.timestamp());
  out += " dev=";
  out += to_string(s.device);
  out += " q=" + format_double(q.w()) + "," + format_double(q.x()) + "," + format_double(q.y()) + "," +
         format_double(q.z());
  out += " p=" + format_double(p.x()) + "," + format_double(p.y()) + "," + format_double(p.z()) + "mm";
  out += " status=";
  out += to_string(s.pose.status());
  out += " seq=" + std::to_string(s.sequence);
  return out;
}

TrackedSample parse_record(std::string_view line, std::size_t line_no) {
  const auto fields = detail::split(line, ' ');
  if (fields.size() != 6) parse_fail(line_no, "expected 6 fields");
  auto value_of = [&](std::size_t i, std::string_view key) {
    const auto f = fields[i];
    if (f.substr(0, key.size()) != key || f.size() <= key.size() || f[key.size()] != '=') {
      parse_fail(line_no, "expected field '" + std::string(key) + "'");
    }
    return f.substr(key.size() + 1);
  };
  const auto t = parse_double(value_of(0, "t"));
  if (!t) parse_fail(line_no, "bad timestamp");
  Device dev;
  try {
    dev = device_from_string(value_of(1, "dev"));
  } catch (const Error&) {
    parse_fail(line_no, "unknown device");
  }
  const auto q = parse_numbers(value_of(2, "q"), 4, line_no);
  auto ptext = value_of(3, "p");
  if (ptext.size() < 2 || ptext.substr(ptext.size() - 2) != "mm") parse_fail(line_no, "position must end in mm");
  const auto p = parse_numbers(ptext.substr(0, ptext.size() - 2), 3, line_no);
  TrackStatus status;
  try {
    status = status_from_string(value_of(4, "status"));
  } catch (const Error&) {
    parse_fail(line_no, "bad status");
  }
  const auto seq = detail::parse_u64(value_of(5, "seq"));
  if (!seq) parse_fail(line_no, "bad sequence number");
  TrackedSample s;
  s.device = dev;
  try {
    s.pose = Pose(Quat(q[0], q[1], q[2], q[3]), Vec3(p[0], p[1], p[2]), *t, status, FrameId::WORLD);
  } catch (const Error& e) {
    parse_fail(line_no, e.what());
  }
  s.sequence = *seq;
  return s;
}

LogWriter::LogWriter(std::ostream& out, const LogHeader& header) : out_(out) {
  out_ << kMagic << '\n' << "#header " << header_json(header) << '\n' << "#end\n";
  out_.flush();
}

void LogWriter::append(const TrackedSample& s) {
  auto it = last_seq_.find(s.device);
  if (it != last_seq_.end() && s.sequence <= it->second) {
    throw Error(Errc::Order, "sequence not increasing for " + std::string(to_string(s.device)));
  }
  last_seq_[s.device] = s.sequence;
  out_ << format_record(s) << '\n';
  out_.flush();
}

void write_log(const TrackingLog& log, std::ostream& out) {
  LogWriter w(out, log.header);
  for (const auto& s : log.samples) w.append(s);
}

TrackingLog parse_log(std::istream& in) {
  TrackingLog log;
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };
  if (!next_line() || line != kMagic) parse_fail(std::max<std::size_t>(line_no, 1), "missing log magic");
  if (!next_line() || line.rfind("#header ", 0) != 0) parse_fail(line_no, "missing header");
  log.header = header_from_json(std::string_view(line).substr(8), line_no);
  if (!next_line() || line != "#end") parse_fail(line_no, "missing header terminator");
  OrderChecker order;
  while (next_line()) {
    if (line.empty()) continue;
    TrackedSample s = parse_record(line, line_no);
    order.check(s, line_no);
    log.samples.push_back(std::move(s));
  }
  return log;
}

TrackingLog read_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open tracking log '" + path + "'");
  return parse_log(in);
}

void write_log_file(const TrackingLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write tracking log '" + path + "'");
  write_log(log, out);
  if (!out) throw Error(Errc::Io, "write failed for '" + path + "'");
}

std::vector<Pose> device_timeline(const TrackingLog& log, Device d) {
  std::vector<Pose> out;
  for (const auto& s : log.samples) {
    if (s.device == d) out.push_back(s.pose);
  }
  return out;
}

// ---- simulator ------------------------------------------------------------

TrackerSimulator::TrackerSimulator(std::map<Device, PoseTimeline> script, const SimulatorConfig& config)
    : script_(std::move(script)), config_(config), rng_(config.seed) {
  if (!(config_.rate_hz > 0.0)) throw Error(Errc::InvalidArgument, "sample rate must be positive");
  if (config_.duration_s < 0.0) throw Error(Errc::InvalidArgument, "duration must be non-negative");
  for (Device d : kAllDevices) {
    auto it = script_.find(d);
    if (it == script_.end()) continue;
    const auto& tl = it->second;
    if (tl.empty()) throw Error(Errc::Range, "empty timeline for " + std::string(to_string(d)));
    if (tl.front().timestamp() > config_.start_s + kMaxExtrapolationS ||
        tl.back().timestamp() < config_.start_s + config_.duration_s - kMaxExtrapolationS) {
      throw Error(Errc::Range, "timeline for " + std::string(to_string(d)) + " does not cover the duration");
    }
    devices_.push_back(d);
  }
  ticks_ = static_cast<std::size_t>(std::floor(config_.duration_s * config_.rate_hz + 1e-9)) + 1;
}

std::optional<TrackedSample> TrackerSimulator::next() {
  if (devices_.empty() || tick_ >= ticks_) return std::nullopt;
  const Device d = devices_[device_index_];
  const double t = config_.start_s + static_cast<double>(tick_) / config_.rate_hz;

  Pose pose = sample_at(script_.at(d), t);
  const bool detached = d == Device::REFERENCE && config_.detach_at && t >= *config_.detach_at;
  if (detached) {
    pose = Pose::missing(t);
  } else if (pose.ok()) {
    Vec3 p = pose.translation();
    Quat q = pose.rotation();
    if (config_.noise.trans_mm > 0.0) {
      std::normal_distribution<double> n(0.0, config_.noise.trans_mm);
      p += Vec3(n(rng_), n(rng_), n(rng_));
    }
    if (config_.noise.rot_deg > 0.0) {
      std::normal_distribution<double> n(0.0, config_.noise.rot_deg * M_PI / 180.0);
      const Vec3 rv(n(rng_), n(rng_), n(rng_));
      const double angle = rv.norm();
      if (angle > 0.0) q = Quat(Eigen::AngleAxisd(angle, rv / angle)) * q;
    }
    pose = Pose(q, p, t, TrackStatus::OK, FrameId::WORLD);
  }

  TrackedSample s{d, pose.with_frame(FrameId::WORLD), ++seq_[d]};
  if (++device_index_ == devices_.size()) {
    device_index_ = 0;
    ++tick_;
  }
  return s;
}

std::vector<TrackedSample> simulate_tracker(const std::map<Device, PoseTimeline>& script,
                                            const SimulatorConfig& config) {
  TrackerSimulator sim(script, config);
  std::vector<TrackedSample> out;
  while (auto s = sim.next()) out.push_back(*s);
  return out;
}

}  // namespace usnav
