#pragma once

#include <memory>

#include "usnav/navengine.hpp"

namespace testing {

// Sphere tumor r=15 at the origin on a 0.5 mm grid wide enough for a 10 mm margin.
inline std::shared_ptr<const usnav::TumorModel> sphere_tumor() {
  static const auto model = [] {
    usnav::GridGeometry g;
    g.origin = usnav::Vec3::Constant(-30.0);
    g.spacing = 0.5;
    g.dims = {121, 121, 121};
    usnav::LabelMask m = usnav::LabelMask::zeros(g, usnav::LabelKind::TUMOR);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = g.center(i).norm() <= 15.0 ? 1 : 0;
    return usnav::TumorModel::build(m);
  }();
  return model;
}

inline usnav::TrackedSample sample(usnav::Device d, const usnav::Pose& p, double t, std::uint64_t seq) {
  return {d, p.with_timestamp(t), seq};
}

}  // namespace testing
