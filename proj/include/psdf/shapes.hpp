#pragma once

#include "psdf/common.hpp"
#include "psdf/mesh.hpp"

namespace psdf {

enum class ShapeKind { sphere, box, torus };

// Analytic test shape with exact signed distance. Pose maps shape-local
// coordinates to world: x_world = R * x_local + t.
struct AnalyticShape {
  ShapeKind kind = ShapeKind::sphere;
  double radius = 1.0;                  // sphere
  Vec3 half_extents = Vec3(0.5, 0.5, 0.5);  // box
  double major_radius = 0.5;            // torus
  double minor_radius = 0.2;            // torus
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate() const;

  static AnalyticShape make_sphere(double r);
  static AnalyticShape make_box(const Vec3& half_extents);
  static AnalyticShape make_torus(double major_r, double minor_r);
};

double analytic_sdf(const AnalyticShape& shape, const Vec3& x);

// Triangulated version of the shape with pose applied; used to feed the
// mesh-based pipeline with shapes whose true SDF is known.
TriMesh shape_mesh(const AnalyticShape& shape, int resolution);

AnalyticShape parse_shape_spec(const std::string& spec);

}  // namespace psdf
