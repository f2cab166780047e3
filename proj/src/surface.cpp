#include <algorithm>
#include <unordered_map>

#include "usnav/error.hpp"
#include "usnav/segment.hpp"

namespace usnav {

namespace {

// Kuhn decomposition of the cube into six tetrahedra around the 0-7
// diagonal. Corner bit 0 = +x, bit 1 = +y, bit 2 = +z. Every cube is split the
// same way, so shared faces match and the surface has no cracks.
constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7}, {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};

struct PaddedGrid {
  Index3 dims;  // mask dims + 2
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
};

void taubin(std::vector<Vec3>& verts, const std::vector<std::vector<int>>& nbrs, const SurfaceOptions& o) {
  std::vector<Vec3> delta(verts.size());
  auto pass = [&](double factor) {
    for (std::size_t i = 0; i < verts.size(); ++i) {
      if (nbrs[i].empty()) {
        delta[i].setZero();
        continue;
      }
      Vec3 avg = Vec3::Zero();
      for (int n : nbrs[i]) avg += verts[n];
      avg /= static_cast<double>(nbrs[i].size());
      delta[i] = factor * (avg - verts[i]);
    }
    for (std::size_t i = 0; i < verts.size(); ++i) verts[i] += delta[i];
  };
  for (int it = 0; it < o.smoothing_iterations; ++it) {
    pass(o.lambda);
    pass(o.mu);
  }
}

}  // namespace

SurfaceMesh extract_surface(const LabelMask& m, const SurfaceOptions& opts) {
  const GridGeometry& g = m.geom;
  if (m.empty()) throw Error(Errc::EmptySegment, "surface of an empty mask");
  const PaddedGrid pg{{g.dims[0] + 2, g.dims[1] + 2, g.dims[2] + 2}};
  std::vector<std::uint8_t> val(static_cast<std::size_t>(pg.dims[0]) * pg.dims[1] * pg.dims[2], 0);
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) val[pg.index(i + 1, j + 1, k + 1)] = m.data[g.index(i, j, k)] ? 1 : 0;
    }
  }
  auto node_pos = [&](std::size_t pidx) {
    const int i = static_cast<int>(pidx % pg.dims[0]);
    const int j = static_cast<int>((pidx / pg.dims[0]) % pg.dims[1]);
    const int k = static_cast<int>(pidx / (static_cast<std::size_t>(pg.dims[0]) * pg.dims[1]));
    return g.center(i - 1, j - 1, k - 1);
  };

  SurfaceMesh mesh;
  mesh.kind = m.kind;
  mesh.frame = FrameId::REFERENCE;
  std::unordered_map<std::uint64_t, int> edge_vertex;
  const std::uint64_t n_nodes = val.size();
  auto vertex_on = [&](std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    const std::uint64_t key = a * n_nodes + b;
    auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (inserted) mesh.vertices.push_back(0.5 * (node_pos(a) + node_pos(b)));
    return it->second;
  };
  auto emit = [&](int a, int b, int c, const Vec3& outward) {
    const Vec3 n = (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]);
    if (n.dot(outward) < 0.0) std::swap(b, c);
    mesh.triangles.push_back({a, b, c});
  };

  for (int k = 0; k + 1 < pg.dims[2]; ++k) {
    for (int j = 0; j + 1 < pg.dims[1]; ++j) {
      for (int i = 0; i + 1 < pg.dims[0]; ++i) {
        std::size_t corner[8];
        int inside_count = 0;
        for (int c = 0; c < 8; ++c) {
          corner[c] = pg.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          inside_count += val[corner[c]];
        }
        if (inside_count == 0 || inside_count == 8) continue;
        for (const auto& tet : kTets) {
          std::size_t in[4], out[4];
          int ni = 0, no = 0;
          for (int c : tet) {
            if (val[corner[c]]) in[ni++] = corner[c];
            else out[no++] = corner[c];
          }
          if (ni == 0 || no == 0) continue;
          Vec3 cin = Vec3::Zero(), cout = Vec3::Zero();
          for (int a = 0; a < ni; ++a) cin += node_pos(in[a]);
          for (int a = 0; a < no; ++a) cout += node_pos(out[a]);
          const Vec3 outward = cout / no - cin / ni;
          if (ni == 1) {
            emit(vertex_on(in[0], out[0]), vertex_on(in[0], out[1]), vertex_on(in[0], out[2]), outward);
          } else if (no == 1) {
            emit(vertex_on(out[0], in[0]), vertex_on(out[0], in[1]), vertex_on(out[0], in[2]), outward);
          } else {
            const int q0 = vertex_on(in[0], out[0]);
            const int q1 = vertex_on(in[0], out[1]);
            const int q2 = vertex_on(in[1], out[1]);
            const int q3 = vertex_on(in[1], out[0]);
            emit(q0, q1, q2, outward);
            emit(q0, q2, q3, outward);
          }
        }
      }
    }
  }

  if (opts.smoothing_iterations > 0) {
    std::vector<std::vector<int>> nbrs(mesh.vertices.size());
    for (const auto& t : mesh.triangles) {
      for (int e = 0; e < 3; ++e) {
        nbrs[t[e]].push_back(t[(e + 1) % 3]);
        nbrs[t[e]].push_back(t[(e + 2) % 3]);
      }
    }
    for (auto& n : nbrs) {
      std::sort(n.begin(), n.end());
      n.erase(std::unique(n.begin(), n.end()), n.end());
    }
    taubin(mesh.vertices, nbrs, opts);
  }
  return mesh;
}

}  // namespace usnav
