#pragma once

#include <optional>
#include <string>

#include "usnav/mesh.hpp"
#include "usnav/volume.hpp"

namespace usnav {

/// Preoperative liver model plus the target lesion. The tumor centroid is the
/// only landmark; when a tumor mask is present it defines the centroid.
struct PreopModel {
  SurfaceMesh liver;
  std::optional<LabelMask> tumor_mask;
  Vec3 tumor_centroid = Vec3::Zero();
  FrameId frame = FrameId::PREOP_MODEL;
  // One landmark fixes translation only, so the registered model is shown
  // for orientation and never used for accuracy-bearing distances.
  bool context_only = true;
};

/// t = intraop - preop. Throws INVALID_POINT for non-finite input.
Vec3 single_landmark(const Vec3& preop_centroid, const Vec3& intraop_centroid);

/// Translates the liver mesh, tumor mask origin and centroid by t and
/// relabels the model as REFERENCE.
PreopModel apply_registration(const PreopModel& model, const Vec3& t);

/// Reads `<dir>/liver.mesh` and `<dir>/tumor_mask.json`.
PreopModel load_preop_model(const std::string& dir);
void save_preop_model(const PreopModel& model, const std::string& dir);

}  // namespace usnav
