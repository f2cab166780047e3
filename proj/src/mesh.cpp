#include "usnav/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "usnav/detail/numtext.hpp"
#include "usnav/error.hpp"

namespace usnav {

double surface_area(const SurfaceMesh& m) {
  double a = 0.0;
  for (const auto& t : m.triangles) {
    const Vec3& p0 = m.vertices[t[0]];
    a += 0.5 * (m.vertices[t[1]] - p0).cross(m.vertices[t[2]] - p0).norm();
  }
  return a;
}

double enclosed_volume(const SurfaceMesh& m) {
  double v = 0.0;
  for (const auto& t : m.triangles) {
    v += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  }
  return v;
}

namespace {

using Edge = std::pair<int, int>;

Edge undirected(int a, int b) { return a < b ? Edge{a, b} : Edge{b, a}; }

}  // namespace

int euler_characteristic(const SurfaceMesh& m) {
  std::set<Edge> edges;
  std::set<int> used;
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) {
      edges.insert(undirected(t[e], t[(e + 1) % 3]));
      used.insert(t[e]);
    }
  }
  return static_cast<int>(used.size()) - static_cast<int>(edges.size()) + static_cast<int>(m.triangles.size());
}

bool is_watertight(const SurfaceMesh& m) {
  std::map<Edge, int> directed;
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) ++directed[{t[e], t[(e + 1) % 3]}];
  }
  for (const auto& [edge, n] : directed) {
    if (n != 1) return false;
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return !m.triangles.empty();
}

Vec3 vertex_centroid(const SurfaceMesh& m) {
  Vec3 c = Vec3::Zero();
  for (const auto& v : m.vertices) c += v;
  return m.vertices.empty() ? c : Vec3(c / static_cast<double>(m.vertices.size()));
}

SurfaceMesh translated(const SurfaceMesh& m, const Vec3& t) {
  SurfaceMesh out = m;
  for (auto& v : out.vertices) v += t;
  return out;
}

SurfaceMesh make_ellipsoid_mesh(const Vec3& center, const Vec3& radii, int stacks, int slices, LabelKind kind,
                                FrameId frame) {
  if (stacks < 2 || slices < 3) throw Error(Errc::InvalidArgument, "ellipsoid mesh needs stacks>=2, slices>=3");
  SurfaceMesh m;
  m.kind = kind;
  m.frame = frame;
  m.vertices.push_back(center + Vec3(0, 0, radii.z()));
  for (int i = 1; i < stacks; ++i) {
    const double theta = M_PI * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double phi = 2.0 * M_PI * j / slices;
      m.vertices.push_back(center + Vec3(radii.x() * std::sin(theta) * std::cos(phi),
                                         radii.y() * std::sin(theta) * std::sin(phi), radii.z() * std::cos(theta)));
    }
  }
  m.vertices.push_back(center - Vec3(0, 0, radii.z()));
  const int south = static_cast<int>(m.vertices.size()) - 1;
  auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
  for (int j = 0; j < slices; ++j) m.triangles.push_back({0, ring(1, j), ring(1, j + 1)});
  for (int i = 1; i < stacks - 1; ++i) {
    for (int j = 0; j < slices; ++j) {
      m.triangles.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      m.triangles.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  }
  for (int j = 0; j < slices; ++j) m.triangles.push_back({south, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
  return m;
}

// ---- file IO --------------------------------------------------------------

std::string format_mesh(const SurfaceMesh& m) {
  using detail::format_double;
  std::string out = "# usnav-mesh 1\n# kind=" + std::string(to_string(m.kind)) +
                    " frame=" + std::string(to_string(m.frame)) + "\n";
  for (const auto& v : m.vertices) {
    out += "v " + format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z()) + "\n";
  }
  for (const auto& t : m.triangles) {
    out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
  }
  return out;
}

SurfaceMesh parse_mesh(std::string_view text) {
  SurfaceMesh m;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(Errc::Parse, "mesh line " + std::to_string(line_no) + ": " + msg);
  };
  bool saw_magic = false;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    if (line == "# usnav-mesh 1") {
      saw_magic = true;
      continue;
    }
    if (line.rfind("# kind=", 0) == 0) {
      const auto parts = detail::split(line.substr(2), ' ');
      for (auto p : parts) {
        if (p.rfind("kind=", 0) == 0) m.kind = label_kind_from_string(p.substr(5));
        if (p.rfind("frame=", 0) == 0) m.frame = frame_from_string(p.substr(6));
      }
      continue;
    }
    if (line[0] == '#') continue;
    const auto f = detail::split(line, ' ');
    if (f[0] == "v") {
      if (f.size() != 4) fail("vertex needs 3 coordinates");
      Vec3 v;
      for (int a = 0; a < 3; ++a) {
        auto d = detail::parse_double(f[a + 1]);
        if (!d) fail("bad coordinate");
        v[a] = *d;
      }
      m.vertices.push_back(v);
    } else if (f[0] == "f") {
      if (f.size() != 4) fail("only triangles are supported");
      std::array<int, 3> t{};
      for (int a = 0; a < 3; ++a) {
        auto idx = detail::parse_u64(f[a + 1]);
        if (!idx || *idx == 0) fail("bad vertex index");
        t[a] = static_cast<int>(*idx) - 1;
      }
      m.triangles.push_back(t);
    } else {
      fail("unknown record '" + std::string(f[0]) + "'");
    }
  }
  if (!saw_magic) throw Error(Errc::Parse, "missing usnav-mesh header");
  for (const auto& t : m.triangles) {
    for (int i : t) {
      if (i >= static_cast<int>(m.vertices.size())) throw Error(Errc::Parse, "face references missing vertex");
    }
  }
  return m;
}

void save_mesh(const SurfaceMesh& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write mesh '" + path + "'");
  out << format_mesh(m);
  if (!out) throw Error(Errc::Io, "write failed for '" + path + "'");
}

SurfaceMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open mesh '" + path + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_mesh(text);
}

// ---- distance queries -----------------------------------------------------

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

MeshDistance::MeshDistance(const SurfaceMesh& mesh) : vertices_(mesh.vertices), triangles_(mesh.triangles) {
  if (triangles_.empty()) return;
  std::vector<Vec3> centroids(triangles_.size());
  for (std::size_t i = 0; i < triangles_.size(); ++i) {
    const auto& t = triangles_[i];
    centroids[i] = (vertices_[t[0]] + vertices_[t[1]] + vertices_[t[2]]) / 3.0;
  }
  order_.resize(triangles_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * triangles_.size() / 4 + 1);
  build(0, static_cast<int>(triangles_.size()), centroids);
}

int MeshDistance::build(int first, int count, std::vector<Vec3>& centroids) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d cbox;
  for (int i = first; i < first + count; ++i) {
    const auto& t = triangles_[order_[i]];
    for (int v : t) box.extend(vertices_[v]);
    cbox.extend(centroids[order_[i]]);
  }
  nodes_[id].box = box;
  constexpr int kLeafSize = 4;
  if (count <= kLeafSize) {
    nodes_[id].first = first;
    nodes_[id].count = count;
    return id;
  }
  int axis = 0;
  cbox.sizes().maxCoeff(&axis);
  const int mid = first + count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](int a, int b) { return centroids[a][axis] < centroids[b][axis]; });
  const int left = build(first, mid - first, centroids);
  const int right = build(mid, first + count - mid, centroids);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

ClosestPoint MeshDistance::closest(const Vec3& p) const {
  ClosestPoint best;
  best.distance = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) return best;
  double best_sq = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (n.box.squaredExteriorDistance(p) >= best_sq) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const auto& t = triangles_[order_[i]];
        const Vec3 q = closest_point_on_triangle(p, vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
        const double d2 = (q - p).squaredNorm();
        if (d2 < best_sq) {
          best_sq = d2;
          best.point = q;
          best.triangle = order_[i];
        }
      }
      continue;
    }
    const double dl = nodes_[n.left].box.squaredExteriorDistance(p);
    const double dr = nodes_[n.right].box.squaredExteriorDistance(p);
    // Visit the nearer child first.
    if (dl < dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  best.distance = std::sqrt(best_sq);
  return best;
}

double min_vertex_distance(const SurfaceMesh& m, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& v : m.vertices) best = std::min(best, (v - p).squaredNorm());
  return std::sqrt(best);
}

}  // namespace usnav
