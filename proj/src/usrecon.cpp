#include "usnav/usrecon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "usnav/error.hpp"

namespace usnav {

void UsFrame::validate() const {
  if (width <= 0 || height <= 0) throw Error(Errc::InvalidArgument, "frame size must be positive");
  if (pixels.size() != static_cast<std::size_t>(width) * height) {
    throw Error(Errc::InvalidArgument, "frame pixel count does not match its size");
  }
  if (!(du > 0.0) || !(dv > 0.0)) throw Error(Errc::InvalidArgument, "pixel spacing must be positive");
  if (!image_pose.ok()) throw Error(Errc::FrameDropped, "frame pose missing");
}

Pose frame_pose(const Pose& probe_sensor, const Pose& reference, const Calibration& cal) {
  if (!probe_sensor.ok() || !reference.ok()) throw Error(Errc::FrameDropped, "probe or reference pose missing");
  return compose(compose(invert(reference), probe_sensor), cal.image_to_sensor).with_frame(FrameId::REFERENCE);
}

namespace {

struct FrameAxes {
  Vec3 origin;
  Vec3 step_u;
  Vec3 step_v;
};

FrameAxes axes_of(const UsFrame& f) {
  const Eigen::Matrix3d r = f.image_pose.rotation_matrix();
  return {f.image_pose.translation(), r.col(0) * f.du, r.col(1) * f.dv};
}

}  // namespace

VoxelVolume compound(const std::vector<UsFrame>& frames, double spacing, std::size_t voxel_budget) {
  if (frames.empty()) throw Error(Errc::EmptySweep, "no frames to compound");
  if (!(spacing > 0.0)) throw Error(Errc::InvalidArgument, "voxel spacing must be positive");
  for (const auto& f : frames) f.validate();

  // Bounding box of mapped pixel centres: the frame is affine, so its four
  // corner pixels bound it.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& f : frames) {
    const FrameAxes a = axes_of(f);
    for (int cu : {0, f.width - 1}) {
      for (int cv : {0, f.height - 1}) {
        const Vec3 p = a.origin + a.step_u * cu + a.step_v * cv;
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
  }

  GridGeometry g;
  g.origin = lo;
  g.spacing = spacing;
  double count = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double extent = (hi[ax] - lo[ax]) / spacing;
    const double n = std::floor(extent + 0.5) + 1.0;
    count *= n;
    if (count > static_cast<double>(voxel_budget)) {
      throw Error(Errc::Budget, "sweep needs more than " + std::to_string(voxel_budget) + " voxels");
    }
    g.dims[ax] = static_cast<int>(n);
  }

  const std::size_t n = g.voxel_count();
  std::vector<std::uint64_t> sum(n, 0);
  std::vector<std::uint32_t> hits(n, 0);
  for (const auto& f : frames) {
    const FrameAxes a = axes_of(f);
    const Vec3 o = (a.origin - g.origin) / spacing;
    const Vec3 su = a.step_u / spacing;
    const Vec3 sv = a.step_v / spacing;
    for (int v = 0; v < f.height; ++v) {
      const Vec3 row = o + sv * v;
      const std::uint8_t* px = f.pixels.data() + static_cast<std::size_t>(v) * f.width;
      for (int u = 0; u < f.width; ++u) {
        const Vec3 c = row + su * u;
        const int i = std::clamp(static_cast<int>(std::lround(c.x())), 0, g.dims[0] - 1);
        const int j = std::clamp(static_cast<int>(std::lround(c.y())), 0, g.dims[1] - 1);
        const int k = std::clamp(static_cast<int>(std::lround(c.z())), 0, g.dims[2] - 1);
        const std::size_t idx = g.index(i, j, k);
        sum[idx] += px[u];
        ++hits[idx];
      }
    }
  }

  VoxelVolume out = VoxelVolume::empty(g);
  for (std::size_t i = 0; i < n; ++i) {
    if (hits[i] == 0) continue;
    out.scalars[i] = static_cast<float>(static_cast<double>(sum[i]) / hits[i]);
    out.weight[i] = hits[i];
  }
  return out;
}

VoxelVolume hole_fill(const VoxelVolume& v, double max_radius_mm) {
  const GridGeometry& g = v.geom;
  const int r = static_cast<int>(std::floor(max_radius_mm / g.spacing + 1e-9));
  struct Offset {
    int di, dj, dk;
    double w;
  };
  std::vector<Offset> ball;
  for (int dk = -r; dk <= r; ++dk) {
    for (int dj = -r; dj <= r; ++dj) {
      for (int di = -r; di <= r; ++di) {
        const double d = g.spacing * std::sqrt(static_cast<double>(di * di + dj * dj + dk * dk));
        if (d == 0.0 || d > max_radius_mm + 1e-9) continue;
        ball.push_back({di, dj, dk, 1.0 / d});
      }
    }
  }

  VoxelVolume out = v;
  if (ball.empty()) return out;
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        if (!v.is_hole(idx)) continue;
        double wsum = 0.0;
        double acc = 0.0;
        for (const auto& o : ball) {
          const int ii = i + o.di, jj = j + o.dj, kk = k + o.dk;
          if (!g.contains(ii, jj, kk)) continue;
          const std::size_t nidx = g.index(ii, jj, kk);
          if (v.is_hole(nidx)) continue;
          wsum += o.w;
          acc += o.w * v.scalars[nidx];
        }
        if (wsum > 0.0) {
          out.scalars[idx] = static_cast<float>(acc / wsum);
          out.weight[idx] = 1;
        }
      }
    }
  }
  return out;
}

SweepAssembly assemble_sweep(const std::vector<ImagePayload>& images, const TrackingLog& log,
                             const Calibration& cal) {
  const auto probe = device_timeline(log, cal.sensor);
  const auto reference = device_timeline(log, Device::REFERENCE);
  SweepAssembly out;
  for (const auto& img : images) {
    UsFrame f;
    f.width = static_cast<int>(img.width);
    f.height = static_cast<int>(img.height);
    f.pixels = img.pixels;
    f.du = img.du;
    f.dv = img.dv;
    f.timestamp = img.timestamp;
    try {
      f.image_pose = frame_pose(sample_at(probe, img.timestamp), sample_at(reference, img.timestamp), cal)
                         .with_timestamp(img.timestamp);
    } catch (const Error& e) {
      if (e.code() != Errc::FrameDropped && e.code() != Errc::Range) throw;
      ++out.dropped;
      continue;
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

void save_frames(const std::vector<ImagePayload>& images, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write frames file '" + path + "'");
  for (const auto& img : images) {
    out << encode_frame({MessageKind::IMAGE_FRAME, encode_image_payload(img)});
  }
  if (!out) throw Error(Errc::Io, "write failed for '" + path + "'");
}

std::vector<ImagePayload> load_frames(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open frames file '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  FrameDecoder dec;
  dec.feed(bytes);
  if (dec.buffered() != 0) throw Error(Errc::Parse, "frames file '" + path + "' ends in a partial frame");
  std::vector<ImagePayload> out;
  while (auto m = dec.next()) {
    if (m->kind != MessageKind::IMAGE_FRAME) throw Error(Errc::Parse, "non-image message in frames file");
    out.push_back(decode_image_payload(m->payload));
  }
  return out;
}

}  // namespace usnav
