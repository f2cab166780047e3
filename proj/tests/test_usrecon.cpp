#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "support.hpp"
#include "usnav/phantom.hpp"
#include "usnav/usrecon.hpp"

using namespace usnav;

namespace {

UsFrame flat_frame(int w, int h, std::uint8_t value, const Pose& pose, double spacing = 0.5) {
  UsFrame f;
  f.width = w;
  f.height = h;
  f.du = f.dv = spacing;
  f.pixels.assign(static_cast<std::size_t>(w) * h, value);
  f.image_pose = pose.with_frame(FrameId::REFERENCE);
  return f;
}

UsFrame ramp_frame(int w, int h, const Pose& pose) {
  UsFrame f = flat_frame(w, h, 0, pose);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) f.pixels[static_cast<std::size_t>(v) * w + u] = static_cast<std::uint8_t>((3 * u + 7 * v) % 256);
  }
  return f;
}

}  // namespace

TEST_CASE("frame_pose") {
  const Calibration id_cal{Pose::identity(), Device::PROBE};
  CHECK(pose_distance(frame_pose(Pose::identity(), Pose::identity(), id_cal), Pose::identity()) == 0.0);

  const Calibration cal{Pose::from_translation(Vec3(0, 0, 10)), Device::PROBE};
  const Pose img = frame_pose(Pose::identity(), Pose::identity(), cal);
  CHECK((img.apply(Vec3::Zero()) - Vec3(0, 0, 10)).norm() < 1e-12);
  CHECK(img.frame() == FrameId::REFERENCE);

  std::mt19937_64 rng(8);
  const Pose probe = testing::random_pose(rng), ref = testing::random_pose(rng), m = testing::random_pose(rng);
  const Calibration rc{testing::random_pose(rng), Device::PROBE};
  CHECK(pose_distance(frame_pose(probe, ref, rc), frame_pose(compose(m, probe), compose(m, ref), rc)) < 1e-9);

  CHECK_ERRC(frame_pose(Pose::missing(0), ref, rc), Errc::FrameDropped);
  CHECK_ERRC(frame_pose(probe, Pose::missing(0), rc), Errc::FrameDropped);
}

TEST_CASE("one frame: plane voxels carry pixel values, everything else is a hole") {
  // two parallel frames 3 mm apart
  UsFrame f = ramp_frame(20, 10, Pose::identity());
  UsFrame g = ramp_frame(20, 10, Pose::from_translation(Vec3(0, 0, 3.0)));
  const VoxelVolume v = compound({f, g}, 0.5);
  CHECK(v.geom.dims == Index3{20, 10, 7});
  CHECK(v.geom.origin == Vec3::Zero());
  for (int k = 0; k < 7; ++k) {
    for (int j = 0; j < 10; ++j) {
      for (int i = 0; i < 20; ++i) {
        const std::size_t idx = v.geom.index(i, j, k);
        if (k == 0 || k == 6) {
          CHECK(v.weight[idx] == 1);
          CHECK(v.scalars[idx] == f.at(i, j));
        } else {
          CHECK(v.is_hole(idx));
        }
      }
    }
  }
}

TEST_CASE("coincident frames are averaged") {
  const VoxelVolume v = compound({flat_frame(8, 8, 100, Pose::identity()), flat_frame(8, 8, 200, Pose::identity())});
  for (std::size_t i = 0; i < v.scalars.size(); ++i) {
    CHECK(v.scalars[i] == 150.0f);
    CHECK(v.weight[i] == 2);
  }
}

TEST_CASE("compounding is order independent and translation equivariant") {
  std::vector<UsFrame> frames;
  for (int i = 0; i < 12; ++i) {
    const Pose p = Pose::from_axis_angle(Vec3(1, 0, 0), 0.03 * i, Vec3(0.25 * i, -2.0, 0.5 * i));
    frames.push_back(ramp_frame(40, 30, p));
  }
  const VoxelVolume a = compound(frames);

  std::vector<UsFrame> reversed(frames.rbegin(), frames.rend());
  CHECK(compound(reversed) == a);

  const Vec3 t(3.25, -7.5, 12.125);
  std::vector<UsFrame> moved = frames;
  for (auto& f : moved) f.image_pose = compose(Pose::from_translation(t), f.image_pose).with_frame(FrameId::REFERENCE);
  const VoxelVolume b = compound(moved);
  CHECK((b.geom.origin - (a.geom.origin + t)).norm() < 1e-9);
  CHECK(b.geom.dims == a.geom.dims);
  CHECK(b.scalars == a.scalars);
  CHECK(b.weight == a.weight);
}

TEST_CASE("filled-voxel mean equals pixel mean for non-overlapping frames") {
  std::vector<UsFrame> frames;
  double pix = 0.0;
  std::size_t npix = 0;
  for (int i = 0; i < 5; ++i) {
    frames.push_back(ramp_frame(16, 16, Pose::from_translation(Vec3(0, 0, 2.0 * i))));
    for (auto p : frames.back().pixels) pix += p;
    npix += frames.back().pixels.size();
  }
  const VoxelVolume v = compound(frames);
  double vox = 0.0;
  std::size_t nvox = 0;
  for (std::size_t i = 0; i < v.scalars.size(); ++i) {
    if (v.is_hole(i)) continue;
    vox += v.scalars[i];
    ++nvox;
  }
  CHECK(std::abs(vox / nvox - pix / npix) < 1e-6);
}

TEST_CASE("EMPTY_SWEEP and BUDGET") {
  CHECK_ERRC(compound({}), Errc::EmptySweep);
  UsFrame a = flat_frame(10, 10, 1, Pose::identity());
  UsFrame b = flat_frame(10, 10, 1, Pose::from_translation(Vec3(0, 0, 100)));
  CHECK_ERRC(compound({a, b}, 0.5, 1000), Errc::Budget);
  CHECK_NOTHROW(compound({a, b}, 0.5, 100000));
  UsFrame bad = a;
  bad.image_pose = Pose::missing(0);
  CHECK_ERRC(compound({bad}), Errc::FrameDropped);
}

TEST_CASE("hole_fill") {
  GridGeometry g;
  g.dims = {5, 5, 5};
  g.spacing = 0.5;

  VoxelVolume full = VoxelVolume::empty(g);
  std::fill(full.scalars.begin(), full.scalars.end(), 42.0f);
  std::fill(full.weight.begin(), full.weight.end(), 1u);
  CHECK(hole_fill(full) == full);

  VoxelVolume one = full;
  std::fill(one.scalars.begin(), one.scalars.end(), 80.0f);
  const std::size_t mid = g.index(2, 2, 2);
  one.weight[mid] = 0;
  one.scalars[mid] = 0.0f;
  const VoxelVolume filled = hole_fill(one);
  CHECK(filled.scalars[mid] == doctest::Approx(80.0).epsilon(1e-12));
  CHECK(filled.weight[mid] == 1);

  // planes 0 | hole | 100 along z
  g.dims = {6, 6, 3};
  VoxelVolume planes = VoxelVolume::empty(g);
  for (int j = 0; j < 6; ++j) {
    for (int i = 0; i < 6; ++i) {
      planes.weight[g.index(i, j, 0)] = 1;
      planes.scalars[g.index(i, j, 0)] = 0.0f;
      planes.weight[g.index(i, j, 2)] = 1;
      planes.scalars[g.index(i, j, 2)] = 100.0f;
    }
  }
  const VoxelVolume pf = hole_fill(planes, 1.5);
  for (int j = 0; j < 6; ++j) {
    for (int i = 0; i < 6; ++i) CHECK(std::abs(pf.scalars[g.index(i, j, 1)] - 50.0) < 1e-6);
  }
  CHECK(pf.scalars[g.index(0, 0, 2)] == 100.0f);
}

TEST_CASE("hole_fill leaves holes beyond the radius") {
  GridGeometry g;
  g.dims = {12, 1, 1};
  g.spacing = 0.5;
  VoxelVolume v = VoxelVolume::empty(g);
  v.weight[0] = 1;
  v.scalars[0] = 10.0f;
  const VoxelVolume f = hole_fill(v, 1.5);
  for (int i = 1; i <= 3; ++i) CHECK(f.weight[g.index(i, 0, 0)] == 1);
  for (int i = 4; i < 12; ++i) CHECK(f.is_hole(g.index(i, 0, 0)));
}

TEST_CASE("parallel sweep through a sphere recovers its volume") {
  PhantomSpec spec = default_phantom(15.0);
  spec.vessels.clear();
  const GroundTruth gt = rasterize(spec, 0.5);
  std::vector<UsFrame> frames;
  for (int i = 0; i <= 80; ++i) {
    const Pose pose = Pose::from_translation(Vec3(-25, -25, -20 + 0.5 * i)).with_frame(FrameId::REFERENCE);
    frames.push_back(render_frame(gt, pose, 101, 101, 0.5, 0.0, 1));
  }
  const VoxelVolume v = hole_fill(compound(frames));
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.scalars.size(); ++i) n += (!v.is_hole(i) && v.scalars[i] > 120.0f) ? 1 : 0;
  const double vol = static_cast<double>(n) * v.geom.voxel_volume();
  const double analytic = 4.0 / 3.0 * std::numbers::pi * 15 * 15 * 15;
  CHECK(std::abs(vol - analytic) / analytic < 0.05);
}

TEST_CASE("assemble_sweep attaches poses and drops frames without tracking") {
  TrackingLog log;
  std::uint64_t seq = 0;
  for (int i = 0; i <= 10; ++i) {
    const double t = 0.1 * i;
    log.samples.push_back({Device::REFERENCE, i >= 8 ? Pose::missing(t) : Pose::from_translation(Vec3(1, 0, 0), t), ++seq});
    log.samples.push_back({Device::PROBE, Pose::from_translation(Vec3(1, 2 * t, 0), t), ++seq});
  }
  const Calibration cal{Pose::from_translation(Vec3(0, 0, 5)), Device::PROBE};
  std::vector<ImagePayload> images;
  for (int i = 0; i < 5; ++i) images.push_back({2, 2, 0.5f, 0.5f, 0.25 * i, static_cast<std::uint64_t>(i), {1, 2, 3, 4}});
  images.push_back({2, 2, 0.5f, 0.5f, 3.0, 9, {1, 2, 3, 4}});
  const SweepAssembly sa = assemble_sweep(images, log, cal);
  CHECK(sa.frames.size() == 3);  // t = 0.75 brackets a missing reference sample
  CHECK(sa.dropped == 3);
  CHECK((sa.frames[2].image_pose.translation() - Vec3(0, 1.0, 5)).norm() < 1e-12);
}

TEST_CASE("volume, mask, field and frame files round-trip bit-exactly") {
  testing::TempDir dir("usrecon");
  std::mt19937_64 rng(5);
  GridGeometry g;
  g.origin = Vec3(-1.1, 2.3, 0.7);
  g.spacing = 0.37;
  g.dims = {7, 5, 3};
  VoxelVolume v = VoxelVolume::empty(g);
  for (std::size_t i = 0; i < v.scalars.size(); ++i) {
    v.scalars[i] = std::uniform_real_distribution<float>(0, 255)(rng);
    v.weight[i] = static_cast<std::uint32_t>(rng() % 4);
  }
  save_volume(v, dir / "v.json");
  CHECK(load_volume(dir / "v.json") == v);
  CHECK(read_volume_geometry(dir / "v.json") == g);

  LabelMask m = LabelMask::zeros(g, LabelKind::VESSEL);
  for (auto& b : m.data) b = rng() % 2;
  save_mask(m, dir / "m.json");
  CHECK(load_mask(dir / "m.json") == m);

  std::vector<ImagePayload> imgs;
  for (int i = 0; i < 3; ++i) {
    ImagePayload p{4, 3, 0.5f, 0.5f, 0.1 * i, static_cast<std::uint64_t>(i), std::vector<std::uint8_t>(12)};
    for (auto& px : p.pixels) px = static_cast<std::uint8_t>(rng());
    imgs.push_back(p);
  }
  save_frames(imgs, dir / "frames.bin");
  CHECK(load_frames(dir / "frames.bin") == imgs);
  CHECK_ERRC(load_volume(dir / "nothing.json"), Errc::Io);
}
