#include "usnav/registration.hpp"

#include <filesystem>

#include "usnav/error.hpp"
#include "usnav/segment.hpp"

namespace usnav {

namespace fs = std::filesystem;

Vec3 single_landmark(const Vec3& preop_centroid, const Vec3& intraop_centroid) {
  if (!preop_centroid.allFinite() || !intraop_centroid.allFinite()) {
    throw Error(Errc::InvalidPoint, "landmarks must be finite");
  }
  return intraop_centroid - preop_centroid;
}

PreopModel apply_registration(const PreopModel& model, const Vec3& t) {
  if (!t.allFinite()) throw Error(Errc::InvalidPoint, "translation must be finite");
  PreopModel out = model;
  out.liver = translated(model.liver, t);
  out.liver.frame = FrameId::REFERENCE;
  if (out.tumor_mask) out.tumor_mask->geom.origin += t;
  out.tumor_centroid = model.tumor_centroid + t;
  out.frame = FrameId::REFERENCE;
  out.context_only = true;
  return out;
}

PreopModel load_preop_model(const std::string& dir) {
  const fs::path liver = fs::path(dir) / "liver.mesh";
  const fs::path tumor = fs::path(dir) / "tumor_mask.json";
  if (!fs::exists(liver)) throw Error(Errc::Io, "missing preoperative liver mesh '" + liver.string() + "'");
  if (!fs::exists(tumor)) throw Error(Errc::Io, "missing preoperative tumor mask '" + tumor.string() + "'");
  PreopModel m;
  m.liver = load_mesh(liver.string());
  m.tumor_mask = load_mask(tumor.string());
  m.tumor_centroid = centroid(*m.tumor_mask);
  m.frame = m.liver.frame;
  return m;
}

void save_preop_model(const PreopModel& model, const std::string& dir) {
  fs::create_directories(dir);
  save_mesh(model.liver, (fs::path(dir) / "liver.mesh").string());
  if (model.tumor_mask) save_mask(*model.tumor_mask, (fs::path(dir) / "tumor_mask.json").string());
}

}  // namespace usnav
