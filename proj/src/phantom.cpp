#include "usnav/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>

#include "usnav/error.hpp"

namespace usnav {

using json = nlohmann::json;

void PhantomSpec::validate() const {
  if (!(bounds_max.array() > bounds_min.array()).all()) throw Error(Errc::InvalidArgument, "phantom bounds are empty");
  auto check_intensity = [](const IntensityModel& m) {
    if (m.mean < 0.0 || m.mean > 255.0 || m.sigma < 0.0) {
      throw Error(Errc::InvalidArgument, "intensity mean must lie in [0,255] with sigma >= 0");
    }
  };
  check_intensity(background);
  for (const auto& t : tumors) {
    if (!(t.radii.array() > 0.0).all()) throw Error(Errc::InvalidArgument, "tumor radii must be positive");
    check_intensity(t.intensity);
  }
  for (const auto& v : vessels) {
    if (!(v.radius > 0.0)) throw Error(Errc::InvalidArgument, "vessel radius must be positive");
    if (v.path.size() < 2) throw Error(Errc::InvalidArgument, "vessel path needs two points");
    check_intensity(v.intensity);
  }
  if (speckle < 0.0) throw Error(Errc::InvalidArgument, "speckle sigma must be non-negative");
}

PhantomSpec default_phantom(double tumor_radius_mm) {
  PhantomSpec s;
  s.tumors.push_back({Vec3::Zero(), Vec3::Constant(tumor_radius_mm), {180.0, 8.0}});
  s.vessels.push_back({{Vec3(-45.0, 26.0, -18.0), Vec3(45.0, 26.0, -8.0)}, 3.0, {20.0, 5.0}});
  s.liver = Ellipsoid{Vec3(5.0, 0.0, -5.0), Vec3(75.0, 55.0, 45.0), {60.0, 0.0}};
  return s;
}

bool inside_ellipsoid(const Ellipsoid& e, const Vec3& p) {
  return ((p - e.center).array() / e.radii.array()).square().sum() <= 1.0;
}

bool inside_tube(const Tube& t, const Vec3& p) {
  const double r2 = t.radius * t.radius;
  for (std::size_t i = 0; i + 1 < t.path.size(); ++i) {
    const Vec3& a = t.path[i];
    const Vec3 ab = t.path[i + 1] - a;
    const double len2 = ab.squaredNorm();
    if (len2 == 0.0) continue;
    const double s = (p - a).dot(ab) / len2;
    if (s < 0.0 || s > 1.0) continue;
    if ((a + s * ab - p).squaredNorm() <= r2) return true;
  }
  for (std::size_t i = 1; i + 1 < t.path.size(); ++i) {
    if ((t.path[i] - p).squaredNorm() <= r2) return true;
  }
  return false;
}

GroundTruth rasterize(const PhantomSpec& spec, double spacing) {
  spec.validate();
  if (!(spacing > 0.0)) throw Error(Errc::InvalidArgument, "spacing must be positive");
  GridGeometry g;
  g.origin = spec.bounds_min;
  g.spacing = spacing;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = static_cast<int>(std::floor((spec.bounds_max[a] - spec.bounds_min[a]) / spacing + 1e-9)) + 1;
  }

  GroundTruth gt;
  gt.volume = VoxelVolume::empty(g);
  std::fill(gt.volume.weight.begin(), gt.volume.weight.end(), 1u);
  gt.tumor = LabelMask::zeros(g, LabelKind::TUMOR);
  gt.vessel = LabelMask::zeros(g, LabelKind::VESSEL);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 p = g.center(i, j, k);
        const std::size_t idx = g.index(i, j, k);
        const IntensityModel* model = &spec.background;
        for (const auto& t : spec.tumors) {
          if (inside_ellipsoid(t, p)) {
            model = &t.intensity;
            gt.tumor.data[idx] = 1;
            break;
          }
        }
        if (!gt.tumor.data[idx]) {
          for (const auto& v : spec.vessels) {
            if (inside_tube(v, p)) {
              model = &v.intensity;
              gt.vessel.data[idx] = 1;
              break;
            }
          }
        }
        // One draw per voxel keeps the stream aligned regardless of labels.
        const double n = unit(rng);
        gt.volume.scalars[idx] = static_cast<float>(std::clamp(model->mean + model->sigma * n, 0.0, 255.0));
      }
    }
  }
  for (const auto& t : spec.tumors) {
    gt.tumor_centers.push_back(t.center);
    gt.tumor_volume_mm3 += 4.0 / 3.0 * M_PI * t.radii.prod();
  }
  for (const auto& v : spec.vessels) {
    for (std::size_t i = 0; i + 1 < v.path.size(); ++i) {
      gt.vessel_volume_mm3 += M_PI * v.radius * v.radius * (v.path[i + 1] - v.path[i]).norm();
    }
  }
  return gt;
}

UsFrame render_frame(const GroundTruth& gt, const Pose& image_pose, int width, int height, double pixel_spacing,
                     double speckle, std::uint64_t seed) {
  if (!image_pose.ok()) throw Error(Errc::PoseMissing, "cannot render a frame at a missing pose");
  if (width <= 0 || height <= 0 || !(pixel_spacing > 0.0)) throw Error(Errc::InvalidArgument, "bad frame size");
  UsFrame f;
  f.width = width;
  f.height = height;
  f.du = pixel_spacing;
  f.dv = pixel_spacing;
  f.image_pose = image_pose.with_frame(FrameId::REFERENCE);
  f.timestamp = image_pose.timestamp();
  f.pixels.assign(static_cast<std::size_t>(width) * height, 0);
  const Eigen::Matrix3d r = image_pose.rotation_matrix();
  const Vec3 su = r.col(0) * pixel_spacing;
  const Vec3 sv = r.col(1) * pixel_spacing;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const Vec3 p = image_pose.translation() + su * u + sv * v;
      const double n = unit(rng);
      const double s = gt.volume.sample(p, -1.0);
      if (s < 0.0) continue;
      const double val = s * (1.0 + speckle * n);
      f.pixels[static_cast<std::size_t>(v) * width + u] = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
    }
  }
  return f;
}

std::vector<Pose> sweep_script(const Pose& start, const Pose& end, int n, double duration_s, double t0_s) {
  if (n < 2) throw Error(Errc::InvalidArgument, "a sweep needs at least two poses");
  const Pose a = start.with_timestamp(t0_s);
  const Pose b = end.with_timestamp(t0_s + duration_s);
  std::vector<Pose> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / (n - 1);
    out.push_back(interpolate(a, b, frac).with_timestamp(t0_s + duration_s * frac));
  }
  return out;
}

// ---- spec file ------------------------------------------------------------

namespace {

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json intensity(const IntensityModel& m) { return json{{"mean", m.mean}, {"sigma", m.sigma}}; }
IntensityModel intensity(const json& j) { return {j.at("mean").get<double>(), j.at("sigma").get<double>()}; }
json ellipsoid(const Ellipsoid& e) {
  return json{{"center", vec(e.center)}, {"radii", vec(e.radii)}, {"intensity", intensity(e.intensity)}};
}
Ellipsoid ellipsoid(const json& j) {
  return {vec(j.at("center")), vec(j.at("radii")), intensity(j.at("intensity"))};
}

}  // namespace

void save_phantom_spec(const PhantomSpec& spec, const std::string& path) {
  json j;
  j["bounds_min"] = vec(spec.bounds_min);
  j["bounds_max"] = vec(spec.bounds_max);
  j["tumors"] = json::array();
  for (const auto& t : spec.tumors) j["tumors"].push_back(ellipsoid(t));
  j["vessels"] = json::array();
  for (const auto& v : spec.vessels) {
    json path_j = json::array();
    for (const auto& p : v.path) path_j.push_back(vec(p));
    j["vessels"].push_back({{"path", path_j}, {"radius", v.radius}, {"intensity", intensity(v.intensity)}});
  }
  j["background"] = intensity(spec.background);
  j["speckle"] = spec.speckle;
  j["seed"] = spec.seed;
  if (spec.liver) j["liver"] = ellipsoid(*spec.liver);
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write phantom spec '" + path + "'");
  out << j.dump(2) << '\n';
}

PhantomSpec load_phantom_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open phantom spec '" + path + "'");
  PhantomSpec s;
  try {
    const json j = json::parse(in);
    s.bounds_min = vec(j.at("bounds_min"));
    s.bounds_max = vec(j.at("bounds_max"));
    for (const auto& t : j.at("tumors")) s.tumors.push_back(ellipsoid(t));
    for (const auto& v : j.at("vessels")) {
      Tube tube;
      for (const auto& p : v.at("path")) tube.path.push_back(vec(p));
      tube.radius = v.at("radius").get<double>();
      tube.intensity = intensity(v.at("intensity"));
      s.vessels.push_back(tube);
    }
    s.background = intensity(j.at("background"));
    s.speckle = j.at("speckle").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("liver")) s.liver = ellipsoid(j.at("liver"));
  } catch (const std::exception& e) {
    throw Error(Errc::Parse, "bad phantom spec '" + path + "': " + e.what());
  }
  s.validate();
  return s;
}

}  // namespace usnav
