#pragma once

#include <optional>
#include <vector>

#include "psdf/common.hpp"
#include "psdf/mesh.hpp"

namespace psdf {

struct ClosestPointResult {
  Vec3 point = Vec3::Zero();
  double distance = 0.0;
  int triangle = -1;
};

struct RayHit {
  double t = 0.0;
  int triangle = -1;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
};

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Axis-aligned bounding volume hierarchy over a triangle soup. Supports exact
// nearest-triangle queries, first-hit raycasts, and generalized winding
// numbers with a far-field dipole approximation.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriMesh& mesh);

  ClosestPointResult closest_point(const Vec3& x) const;
  std::optional<RayHit> raycast(const Vec3& origin, const Vec3& dir,
                                double t_max = std::numeric_limits<double>::infinity()) const;
  double winding_number(const Vec3& x) const;
  bool contains(const Vec3& x) const { return winding_number(x) > 0.5; }

  int triangle_count() const { return static_cast<int>(tri_a_.size()); }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;  // internal children, or -1 for leaf
    int begin = 0, count = 0;   // leaf triangle range in order_
    Vec3 dipole = Vec3::Zero();     // sum of area-weighted triangle normals
    Vec3 mass_center = Vec3::Zero();  // area-weighted centroid
    double radius = 0.0;            // bounding radius around mass_center
  };

  int build(int begin, int end, std::vector<Vec3>& centroids);
  void closest_point_rec(int node, const Vec3& x, ClosestPointResult& best) const;
  void raycast_rec(int node, const Vec3& origin, const Vec3& inv_dir, const Vec3& dir,
                   double& t_best, int& tri_best) const;
  double winding_rec(int node, const Vec3& x) const;
  double exact_winding(int node, const Vec3& x) const;

  std::vector<Vec3> tri_a_, tri_b_, tri_c_, tri_n_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace psdf
