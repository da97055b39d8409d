#pragma once

#include "psdf/common.hpp"

#include <array>
#include <filesystem>

namespace psdf {

// Watertight triangle mesh in world coordinates. After normalize_unit_sphere
// the bounding-box center sits at the origin and the farthest vertex has
// norm 1.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  Vec3 triangle_normal(int t) const;
  double triangle_area(int t) const;
  double total_area() const;
  void bounding_box(Vec3& lo, Vec3& hi) const;
};

// OBJ or binary little-endian PLY, chosen by extension. Polygonal faces are
// fan-triangulated.
TriMesh load_mesh(const std::filesystem::path& path);
void save_obj(const TriMesh& mesh, const std::filesystem::path& path);

struct NormalizeResult {
  TriMesh mesh;
  double scale = 1.0;  // x' = (x - offset) * scale
  Vec3 offset = Vec3::Zero();
};

NormalizeResult normalize_unit_sphere(const TriMesh& mesh);

// True when some edge is used by exactly one triangle.
bool has_open_edges(const TriMesh& mesh);
// True when every edge is shared by exactly two triangles.
bool is_edge_manifold(const TriMesh& mesh);

TriMesh make_icosphere(int subdivisions, double radius = 1.0, const Vec3& center = Vec3::Zero());
TriMesh make_box_mesh(const Vec3& half_extents, const Vec3& center = Vec3::Zero());
TriMesh make_torus_mesh(double major_radius, double minor_radius, int major_segments = 64,
                        int minor_segments = 32, const Vec3& center = Vec3::Zero());

}  // namespace psdf
