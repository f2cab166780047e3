#include "usnav/segment.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "usnav/error.hpp"

namespace usnav {

namespace {

constexpr int kNeighbors6[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};

std::vector<std::size_t> sorted_seed_indices(const VoxelVolume& v, const std::vector<Index3>& seeds) {
  std::vector<std::size_t> out;
  for (const auto& s : seeds) {
    if (!v.geom.contains(s)) throw Error(Errc::InvalidArgument, "seed outside the volume");
    const std::size_t idx = v.geom.index(s);
    if (v.is_hole(idx)) throw Error(Errc::InvalidArgument, "seed placed on a hole voxel");
    out.push_back(idx);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

LabelMask region_grow(const VoxelVolume& v, const SeedSet& seeds, double tol) {
  if (seeds.inside.empty()) throw Error(Errc::EmptySegment, "no inside seeds");
  if (std::isnan(tol) || tol < 0.0) throw Error(Errc::InvalidArgument, "tolerance must be non-negative");
  const GridGeometry& g = v.geom;
  const auto inside = sorted_seed_indices(v, seeds.inside);
  const auto outside = sorted_seed_indices(v, seeds.outside);
  {
    std::vector<std::size_t> both;
    std::set_intersection(inside.begin(), inside.end(), outside.begin(), outside.end(), std::back_inserter(both));
    if (!both.empty()) throw Error(Errc::SeedConflict, "a voxel is seeded both inside and outside");
  }

  enum : std::uint8_t { kFree = 0, kIn = 1, kOut = 2 };
  std::vector<std::uint8_t> label(g.voxel_count(), kFree);
  std::vector<std::uint8_t> cand(g.voxel_count(), 0);

  struct Front {
    std::vector<std::size_t> frontier;
    double sum = 0.0;
    std::size_t count = 0;
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  };
  Front fin, fout;
  for (auto idx : inside) {
    label[idx] = kIn;
    fin.sum += v.scalars[idx];
    ++fin.count;
  }
  for (auto idx : outside) {
    label[idx] = kOut;
    fout.sum += v.scalars[idx];
    ++fout.count;
  }
  fin.frontier = inside;
  fout.frontier = outside;

  std::vector<std::size_t> touched;
  while (!fin.frontier.empty() || !fout.frontier.empty()) {
    touched.clear();
    auto propose = [&](const Front& f, std::uint8_t bit) {
      const double mean = f.mean();
      for (std::size_t idx : f.frontier) {
        const Index3 c = g.ijk(idx);
        for (const auto& d : kNeighbors6) {
          const int i = c[0] + d[0], j = c[1] + d[1], k = c[2] + d[2];
          if (!g.contains(i, j, k)) continue;
          const std::size_t n = g.index(i, j, k);
          if (label[n] != kFree || v.is_hole(n) || (cand[n] & bit)) continue;
          if (!(std::abs(static_cast<double>(v.scalars[n]) - mean) <= tol)) continue;
          if (cand[n] == 0) touched.push_back(n);
          cand[n] |= bit;
        }
      }
    };
    propose(fin, kIn);
    propose(fout, kOut);
    std::sort(touched.begin(), touched.end());
    fin.frontier.clear();
    fout.frontier.clear();
    for (std::size_t n : touched) {
      // Reached by both in the same round: tie goes to outside.
      Front& f = (cand[n] & kOut) ? fout : fin;
      label[n] = (cand[n] & kOut) ? kOut : kIn;
      f.frontier.push_back(n);
      f.sum += v.scalars[n];
      ++f.count;
      cand[n] = 0;
    }
  }

  LabelMask m = LabelMask::zeros(g, LabelKind::TUMOR);
  for (std::size_t i = 0; i < label.size(); ++i) m.data[i] = label[i] == kIn ? 1 : 0;
  if (m.empty()) throw Error(Errc::EmptySegment, "region growing produced no voxels");
  return m;
}

std::vector<ComponentInfo> connected_components(const LabelMask& m, int connectivity, std::vector<int>* labels) {
  if (connectivity != 6 && connectivity != 26) throw Error(Errc::InvalidArgument, "connectivity must be 6 or 26");
  const GridGeometry& g = m.geom;
  std::vector<int> lab(g.voxel_count(), 0);
  std::vector<Index3> offsets;
  for (int dk = -1; dk <= 1; ++dk) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        const int manhattan = std::abs(di) + std::abs(dj) + std::abs(dk);
        if (manhattan == 0 || (connectivity == 6 && manhattan != 1)) continue;
        offsets.push_back({di, dj, dk});
      }
    }
  }
  std::vector<ComponentInfo> comps;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < lab.size(); ++start) {
    if (!m.data[start] || lab[start]) continue;
    const int id = static_cast<int>(comps.size()) + 1;
    ComponentInfo info;
    info.first_index = start;
    Vec3 acc = Vec3::Zero();
    lab[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t cur = queue.front();
      queue.pop_front();
      const Index3 c = g.ijk(cur);
      ++info.voxels;
      acc += g.center(c);
      for (const auto& d : offsets) {
        const int i = c[0] + d[0], j = c[1] + d[1], k = c[2] + d[2];
        if (!g.contains(i, j, k)) continue;
        const std::size_t n = g.index(i, j, k);
        if (m.data[n] && !lab[n]) {
          lab[n] = id;
          queue.push_back(n);
        }
      }
    }
    info.volume_mm3 = static_cast<double>(info.voxels) * g.voxel_volume();
    info.centroid = acc / static_cast<double>(info.voxels);
    comps.push_back(info);
  }
  if (labels) *labels = std::move(lab);
  return comps;
}

LabelMask ThresholdVesselSegmenter::segment(const VoxelVolume& v) const {
  LabelMask dark = LabelMask::zeros(v.geom, LabelKind::VESSEL);
  for (std::size_t i = 0; i < dark.data.size(); ++i) {
    dark.data[i] = (!v.is_hole(i) && v.scalars[i] <= params_.threshold) ? 1 : 0;
  }
  std::vector<int> labels;
  const auto comps = connected_components(dark, 26, &labels);
  std::vector<std::uint8_t> keep(comps.size() + 1, 0);
  for (std::size_t c = 0; c < comps.size(); ++c) keep[c + 1] = comps[c].volume_mm3 >= params_.min_component_mm3;
  for (std::size_t i = 0; i < dark.data.size(); ++i) dark.data[i] = keep[labels[i]];
  return dark;
}

LabelMask vessel_baseline(const VoxelVolume& v, const VesselParams& params) {
  return ThresholdVesselSegmenter(params).segment(v);
}

LabelMask run_segmenter(const Segmenter& s, const VoxelVolume& v, LabelKind kind) {
  LabelMask m = s.segment(v);
  if (!(m.geom == v.geom) || m.data.size() != v.geom.voxel_count()) {
    throw Error(Errc::InvalidArgument, "segmenter '" + s.name() + "' returned a mask on a different grid");
  }
  m.kind = kind;
  return m;
}

// ---- distance transform ---------------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform of f (lower envelope of parabolas).
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  int first = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] < kInf) {
      first = q;
      break;
    }
  }
  if (first < 0) {
    std::fill(d, d + n, kInf);
    return;
  }
  v[0] = first;
  for (int q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[k]) {
        --k;
        if (k < 0) break;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = static_cast<double>(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// In-place squared EDT over a 3D array (x fastest) of feature costs (0 or inf).
void edt_3d(std::vector<double>& a, const Index3& dims) {
  const int nmax = std::max({dims[0], dims[1], dims[2]});
  std::vector<double> f(nmax), d(nmax), z(nmax + 1);
  std::vector<int> v(nmax);
  const std::size_t nx = dims[0], ny = dims[1];
  const std::size_t stride[3] = {1, nx, nx * ny};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = dims[axis];
    const int o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
    for (int b = 0; b < dims[o2]; ++b) {
      for (int c = 0; c < dims[o1]; ++c) {
        const std::size_t base = static_cast<std::size_t>(b) * stride[o2] + static_cast<std::size_t>(c) * stride[o1];
        for (int q = 0; q < n; ++q) f[q] = a[base + q * stride[axis]];
        edt_1d(f.data(), d.data(), n, v, z);
        for (int q = 0; q < n; ++q) a[base + q * stride[axis]] = d[q];
      }
    }
  }
}

}  // namespace

DistanceField distance_field(const LabelMask& m) {
  const GridGeometry& g = m.geom;
  if (m.empty()) throw Error(Errc::EmptySegment, "distance field of an empty mask");
  const Index3 pd{g.dims[0] + 2, g.dims[1] + 2, g.dims[2] + 2};
  const std::size_t pn = static_cast<std::size_t>(pd[0]) * pd[1] * pd[2];
  auto pidx = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i + 1) + static_cast<std::size_t>(pd[0]) * (static_cast<std::size_t>(j + 1) + static_cast<std::size_t>(pd[1]) * (k + 1));
  };
  // to_inside: features are mask voxels; to_outside: background voxels and the padding shell.
  std::vector<double> to_inside(pn, kInf), to_outside(pn, 0.0);
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const bool in = m.data[g.index(i, j, k)] != 0;
        to_inside[pidx(i, j, k)] = in ? 0.0 : kInf;
        to_outside[pidx(i, j, k)] = in ? kInf : 0.0;
      }
    }
  }
  edt_3d(to_inside, pd);
  edt_3d(to_outside, pd);

  DistanceField f;
  f.geom = g;
  f.values.resize(g.voxel_count());
  const double half = 0.5 * g.spacing;
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        if (m.data[idx]) {
          f.values[idx] = -(std::sqrt(to_outside[pidx(i, j, k)]) * g.spacing - half);
        } else {
          f.values[idx] = std::sqrt(to_inside[pidx(i, j, k)]) * g.spacing - half;
        }
      }
    }
  }
  return f;
}

MarginResult expand_margin(const LabelMask& m, double margin_mm) {
  return expand_margin(m, distance_field(m), margin_mm);
}

MarginResult expand_margin(const LabelMask& m, const DistanceField& sdf, double margin_mm) {
  if (!(margin_mm > 0.0)) throw Error(Errc::InvalidArgument, "margin must be positive");
  const GridGeometry& g = m.geom;
  MarginResult r;
  r.mask = LabelMask::zeros(g, LabelKind::MARGIN);
  Index3 lo{g.dims[0], g.dims[1], g.dims[2]}, hi{-1, -1, -1};
  // Outside values are centre distance minus half a voxel; thresholding the
  // centre distance itself keeps expand(expand(m, a), b) inside expand(m, a+b).
  const double half = 0.5 * g.spacing;
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    r.mask.data[i] = (m.data[i] || sdf.values[i] + half <= margin_mm) ? 1 : 0;
    if (m.data[i]) {
      const Index3 c = g.ijk(i);
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], c[a]);
        hi[a] = std::max(hi[a], c[a]);
      }
    }
  }
  for (int a = 0; a < 3 && hi[0] >= 0; ++a) {
    if (lo[a] * g.spacing < margin_mm || (g.dims[a] - 1 - hi[a]) * g.spacing < margin_mm) r.clipped = true;
  }
  return r;
}

Vec3 centroid(const LabelMask& m) {
  Vec3 acc = Vec3::Zero();
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    if (!m.data[i]) continue;
    acc += m.geom.center(i);
    ++n;
  }
  if (n == 0) throw Error(Errc::EmptySegment, "centroid of an empty mask");
  return acc / static_cast<double>(n);
}

LabelMask manual_edit(const LabelMask& m, EditOp op, const Vec3& center_mm, double radius_mm) {
  LabelMask out = m;
  const GridGeometry& g = m.geom;
  const Vec3 lo = g.to_voxel(center_mm - Vec3::Constant(radius_mm));
  const Vec3 hi = g.to_voxel(center_mm + Vec3::Constant(radius_mm));
  const double r2 = radius_mm * radius_mm;
  for (int k = std::max(0, static_cast<int>(std::floor(lo.z()))); k <= std::min(g.dims[2] - 1, static_cast<int>(std::ceil(hi.z()))); ++k) {
    for (int j = std::max(0, static_cast<int>(std::floor(lo.y()))); j <= std::min(g.dims[1] - 1, static_cast<int>(std::ceil(hi.y()))); ++j) {
      for (int i = std::max(0, static_cast<int>(std::floor(lo.x()))); i <= std::min(g.dims[0] - 1, static_cast<int>(std::ceil(hi.x()))); ++i) {
        if ((g.center(i, j, k) - center_mm).squaredNorm() <= r2) out.data[g.index(i, j, k)] = op == EditOp::ADD ? 1 : 0;
      }
    }
  }
  return out;
}

double dice(const LabelMask& a, const LabelMask& b) {
  if (!(a.geom == b.geom)) throw Error(Errc::InvalidArgument, "dice of masks on different grids");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace usnav
