#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "usnav/geometry.hpp"

namespace usnav {

enum class Device { REFERENCE, PROBE, SEALER, POINTER };

inline constexpr Device kAllDevices[] = {Device::REFERENCE, Device::PROBE, Device::SEALER, Device::POINTER};

std::string_view to_string(Device d);
Device device_from_string(std::string_view s);
FrameId sensor_frame(Device d);

struct TrackedSample {
  Device device = Device::REFERENCE;
  Pose pose;  // in WORLD
  std::uint64_t sequence = 0;

  friend bool operator==(const TrackedSample&, const TrackedSample&) = default;
};

struct LogHeader {
  int version = 1;
  double rate_hz = 60.0;
  std::vector<Device> devices{std::begin(kAllDevices), std::end(kAllDevices)};
  // Fixed per-device transforms: image_to_sensor for PROBE, tip offsets for
  // SEALER/POINTER.
  std::map<Device, Pose> calibrations;

  friend bool operator==(const LogHeader&, const LogHeader&) = default;
};

struct TrackingLog {
  LogHeader header;
  std::vector<TrackedSample> samples;

  friend bool operator==(const TrackingLog&, const TrackingLog&) = default;
};

// ---- log file -------------------------------------------------------------
//
//   #usnav-tracklog 1
//   #header {json}
//   #end
//   t=<s> dev=<name> q=<w,x,y,z> p=<x,y,z>mm status=<OK|MISSING> seq=<n>
//
// Doubles are written in shortest round-trip form, so parse(write(x)) == x.

std::string format_record(const TrackedSample& s);
TrackedSample parse_record(std::string_view line, std::size_t line_no);

/// Appends records one line at a time and flushes each, so a crash loses at
/// most the line being written.
class LogWriter {
 public:
  LogWriter(std::ostream& out, const LogHeader& header);
  void append(const TrackedSample& s);

 private:
  std::ostream& out_;
  std::map<Device, std::uint64_t> last_seq_;
};

void write_log(const TrackingLog& log, std::ostream& out);
/// Throws PARSE (with line number) on malformed lines and ORDER when a
/// device's sequence or time goes backwards.
TrackingLog parse_log(std::istream& in);

TrackingLog read_log_file(const std::string& path);
void write_log_file(const TrackingLog& log, const std::string& path);

/// Time-ordered pose timeline of one device.
std::vector<Pose> device_timeline(const TrackingLog& log, Device d);

// ---- simulated EM tracker -------------------------------------------------

using PoseTimeline = std::vector<Pose>;

struct TrackerNoise {
  double rot_deg = 0.05;
  double trans_mm = 0.1;
};

struct SimulatorConfig {
  double rate_hz = 60.0;
  double start_s = 0.0;
  double duration_s = 10.0;
  TrackerNoise noise;
  std::optional<double> detach_at;  // REFERENCE is MISSING from this time on
  std::uint64_t seed = 1;
};

/// Emits samples tick by tick at a fixed rate, devices in enum order within a
/// tick. Per-axis Gaussian translation noise and a Gaussian rotation-vector
/// perturbation are applied to OK poses.
class TrackerSimulator {
 public:
  TrackerSimulator(std::map<Device, PoseTimeline> script, const SimulatorConfig& config);

  std::optional<TrackedSample> next();
  std::size_t tick_count() const { return ticks_; }

 private:
  std::map<Device, PoseTimeline> script_;
  SimulatorConfig config_;
  std::size_t ticks_ = 0;
  std::size_t tick_ = 0;
  std::size_t device_index_ = 0;
  std::vector<Device> devices_;
  std::map<Device, std::uint64_t> seq_;
  std::mt19937_64 rng_;
};

std::vector<TrackedSample> simulate_tracker(const std::map<Device, PoseTimeline>& script,
                                            const SimulatorConfig& config);

}  // namespace usnav
