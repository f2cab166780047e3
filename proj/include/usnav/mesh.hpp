#pragma once

#include <array>
#include <string>
#include <vector>

#include "usnav/geometry.hpp"
#include "usnav/volume.hpp"

namespace usnav {

struct SurfaceMesh {
  std::vector<Vec3> vertices;               // mm
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise seen from outside
  LabelKind kind = LabelKind::TUMOR;
  FrameId frame = FrameId::REFERENCE;

  bool empty() const { return triangles.empty(); }
  friend bool operator==(const SurfaceMesh&, const SurfaceMesh&) = default;
};

double surface_area(const SurfaceMesh& m);
/// Signed enclosed volume (divergence theorem); positive for outward normals.
double enclosed_volume(const SurfaceMesh& m);
int euler_characteristic(const SurfaceMesh& m);
/// Every edge is shared by exactly two triangles traversing it in opposite
/// directions.
bool is_watertight(const SurfaceMesh& m);
Vec3 vertex_centroid(const SurfaceMesh& m);
SurfaceMesh translated(const SurfaceMesh& m, const Vec3& t);

/// Triangulated ellipsoid (UV sphere), outward oriented.
SurfaceMesh make_ellipsoid_mesh(const Vec3& center, const Vec3& radii, int stacks, int slices, LabelKind kind,
                                FrameId frame);

// ASCII mesh file: OBJ subset (`v x y z`, `f a b c` 1-based) with a comment
// header carrying label kind and frame. Doubles are shortest round-trip.
void save_mesh(const SurfaceMesh& m, const std::string& path);
SurfaceMesh load_mesh(const std::string& path);
std::string format_mesh(const SurfaceMesh& m);
SurfaceMesh parse_mesh(std::string_view text);

struct ClosestPoint {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  int triangle = -1;
};

/// Closest-point queries against a triangle mesh through an AABB tree.
class MeshDistance {
 public:
  MeshDistance() = default;
  explicit MeshDistance(const SurfaceMesh& mesh);

  bool empty() const { return nodes_.empty(); }
  ClosestPoint closest(const Vec3& p) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;   // child node, or -1 for a leaf
    int right = -1;
    int first = 0;   // leaf triangle range in order_
    int count = 0;
  };

  int build(int first, int count, std::vector<Vec3>& centroids);

  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Brute-force minimum distance from p to any mesh vertex.
double min_vertex_distance(const SurfaceMesh& m, const Vec3& p);

}  // namespace usnav
