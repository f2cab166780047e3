#include "usnav/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>

#include "usnav/error.hpp"

namespace usnav {

static_assert(std::endian::native == std::endian::little, "volume files assume a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

Index3 GridGeometry::nearest(const Vec3& p) const {
  const Vec3 v = to_voxel(p);
  return {static_cast<int>(std::lround(v.x())), static_cast<int>(std::lround(v.y())),
          static_cast<int>(std::lround(v.z()))};
}

void GridGeometry::validate() const {
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw Error(Errc::InvalidArgument, "grid spacing must be positive");
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) throw Error(Errc::InvalidArgument, "grid dims must be positive");
  if (!origin.allFinite()) throw Error(Errc::InvalidArgument, "grid origin must be finite");
}

VoxelVolume VoxelVolume::empty(const GridGeometry& g) {
  VoxelVolume v;
  v.geom = g;
  v.scalars.assign(g.voxel_count(), 0.0f);
  v.weight.assign(g.voxel_count(), 0);
  return v;
}

namespace {

template <class Get>
double trilinear(const GridGeometry& g, const Vec3& p, Get get, double outside, bool clamp) {
  Vec3 v = g.to_voxel(p);
  if (clamp) {
    for (int a = 0; a < 3; ++a) v[a] = std::clamp(v[a], 0.0, static_cast<double>(g.dims[a] - 1));
  } else {
    for (int a = 0; a < 3; ++a) {
      if (!(v[a] >= 0.0 && v[a] <= g.dims[a] - 1)) return outside;
    }
  }
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    i0[a] = std::min(static_cast<int>(std::floor(v[a])), std::max(g.dims[a] - 2, 0));
    f[a] = v[a] - i0[a];
  }
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
        if (w == 0.0) continue;
        acc += w * get(g.index(std::min(i0[0] + dx, g.dims[0] - 1), std::min(i0[1] + dy, g.dims[1] - 1),
                               std::min(i0[2] + dz, g.dims[2] - 1)));
      }
    }
  }
  return acc;
}

}  // namespace

double VoxelVolume::sample(const Vec3& p, double outside) const {
  return trilinear(geom, p, [&](std::size_t i) { return static_cast<double>(scalars[i]); }, outside, false);
}

double DistanceField::sample(const Vec3& p) const {
  return trilinear(geom, p, [&](std::size_t i) { return values[i]; }, 0.0, true);
}

std::string_view to_string(LabelKind k) {
  switch (k) {
    case LabelKind::TUMOR: return "TUMOR";
    case LabelKind::VESSEL: return "VESSEL";
    case LabelKind::MARGIN: return "MARGIN";
    case LabelKind::CLIP: return "CLIP";
    case LabelKind::LIVER: return "LIVER";
  }
  return "TUMOR";
}

LabelKind label_kind_from_string(std::string_view s) {
  for (auto k : {LabelKind::TUMOR, LabelKind::VESSEL, LabelKind::MARGIN, LabelKind::CLIP, LabelKind::LIVER}) {
    if (to_string(k) == s) return k;
  }
  throw Error(Errc::Parse, "unknown label kind '" + std::string(s) + "'");
}

LabelMask LabelMask::zeros(const GridGeometry& g, LabelKind kind) {
  LabelMask m;
  m.geom = g;
  m.data.assign(g.voxel_count(), 0);
  m.kind = kind;
  return m;
}

std::size_t LabelMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

// ---- file IO --------------------------------------------------------------

namespace {

std::string raw_name_for(const std::string& sidecar, const std::string& suffix) {
  fs::path p(sidecar);
  return p.stem().string() + suffix;
}

template <class T>
void write_raw(const fs::path& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) throw Error(Errc::Io, "write failed for '" + path.string() + "'");
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  std::vector<T> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(T))) {
    throw Error(Errc::Parse, "raw file '" + path.string() + "' shorter than sidecar dims");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(Errc::Parse, "raw file '" + path.string() + "' longer than sidecar dims");
  }
  return data;
}

json sidecar_json(const GridGeometry& g, const std::string& dtype, const std::string& data_file) {
  return json{{"format", "usnav-volume"},
              {"version", 1},
              {"origin", {g.origin.x(), g.origin.y(), g.origin.z()}},
              {"spacing", g.spacing},
              {"dims", {g.dims[0], g.dims[1], g.dims[2]}},
              {"dtype", dtype},
              {"frame", "REFERENCE"},
              {"endianness", "little"},
              {"data_file", data_file}};
}

void write_sidecar(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw Error(Errc::Io, "write failed for '" + path + "'");
}

struct Sidecar {
  json j;
  GridGeometry geom;
  std::string dtype;
  fs::path dir;
};

Sidecar read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open volume sidecar '" + path + "'");
  Sidecar s;
  try {
    s.j = json::parse(in);
    if (s.j.at("format") != "usnav-volume") throw Error(Errc::Parse, "not a usnav volume sidecar");
    if (s.j.at("endianness") != "little") throw Error(Errc::Parse, "unsupported endianness");
    const auto& o = s.j.at("origin");
    s.geom.origin = Vec3(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());
    s.geom.spacing = s.j.at("spacing").get<double>();
    const auto& d = s.j.at("dims");
    s.geom.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    s.dtype = s.j.at("dtype").get<std::string>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::Parse, "bad volume sidecar '" + path + "': " + e.what());
  }
  s.geom.validate();
  s.dir = fs::path(path).parent_path();
  return s;
}

void expect_dtype(const Sidecar& s, const std::string& dtype, const std::string& path) {
  if (s.dtype != dtype) throw Error(Errc::Parse, "'" + path + "' has dtype " + s.dtype + ", expected " + dtype);
}

}  // namespace

void save_volume(const VoxelVolume& v, const std::string& sidecar_path) {
  const std::string data = raw_name_for(sidecar_path, ".raw");
  const std::string weights = raw_name_for(sidecar_path, ".weight.raw");
  json j = sidecar_json(v.geom, "f32", data);
  j["weight_file"] = weights;
  j["weight_dtype"] = "u32";
  const fs::path dir = fs::path(sidecar_path).parent_path();
  write_raw(dir / data, v.scalars);
  write_raw(dir / weights, v.weight);
  write_sidecar(sidecar_path, j);
}

VoxelVolume load_volume(const std::string& sidecar_path) {
  const Sidecar s = read_sidecar(sidecar_path);
  expect_dtype(s, "f32", sidecar_path);
  VoxelVolume v;
  v.geom = s.geom;
  const std::size_t n = s.geom.voxel_count();
  v.scalars = read_raw<float>(s.dir / s.j.at("data_file").get<std::string>(), n);
  if (s.j.contains("weight_file")) {
    v.weight = read_raw<std::uint32_t>(s.dir / s.j.at("weight_file").get<std::string>(), n);
  } else {
    v.weight.assign(n, 1);
  }
  return v;
}

void save_mask(const LabelMask& m, const std::string& sidecar_path) {
  const std::string data = raw_name_for(sidecar_path, ".raw");
  json j = sidecar_json(m.geom, "u8", data);
  j["label_kind"] = std::string(to_string(m.kind));
  write_raw(fs::path(sidecar_path).parent_path() / data, m.data);
  write_sidecar(sidecar_path, j);
}

LabelMask load_mask(const std::string& sidecar_path) {
  const Sidecar s = read_sidecar(sidecar_path);
  expect_dtype(s, "u8", sidecar_path);
  LabelMask m;
  m.geom = s.geom;
  m.kind = label_kind_from_string(s.j.value("label_kind", std::string("TUMOR")));
  m.data = read_raw<std::uint8_t>(s.dir / s.j.at("data_file").get<std::string>(), s.geom.voxel_count());
  return m;
}

void save_field(const DistanceField& f, const std::string& sidecar_path) {
  const std::string data = raw_name_for(sidecar_path, ".raw");
  std::vector<float> vals(f.values.begin(), f.values.end());
  write_raw(fs::path(sidecar_path).parent_path() / data, vals);
  write_sidecar(sidecar_path, sidecar_json(f.geom, "f32", data));
}

DistanceField load_field(const std::string& sidecar_path) {
  const Sidecar s = read_sidecar(sidecar_path);
  expect_dtype(s, "f32", sidecar_path);
  DistanceField f;
  f.geom = s.geom;
  const auto vals = read_raw<float>(s.dir / s.j.at("data_file").get<std::string>(), s.geom.voxel_count());
  f.values.assign(vals.begin(), vals.end());
  return f;
}

GridGeometry read_volume_geometry(const std::string& sidecar_path) { return read_sidecar(sidecar_path).geom; }

}  // namespace usnav
