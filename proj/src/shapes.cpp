#include "psdf/shapes.hpp"

#include <sstream>

namespace psdf {

void AnalyticShape::validate() const {
  require((rotation * rotation.transpose() - Mat3::Identity()).norm() < 1e-9,
          Errc::contract_violation, "shape pose rotation is not orthonormal");
  const double off = translation.norm();
  switch (kind) {
    case ShapeKind::sphere:
      require(radius > 0.0, Errc::contract_violation, "sphere radius must be positive");
      require(off + radius <= 1.0 + 1e-12, Errc::contract_violation,
              "sphere does not fit inside the unit sphere");
      break;
    case ShapeKind::box:
      require(half_extents.minCoeff() > 0.0, Errc::contract_violation,
              "box half-extents must be positive");
      require(off + half_extents.norm() <= 1.0 + 1e-12, Errc::contract_violation,
              "box does not fit inside the unit sphere");
      break;
    case ShapeKind::torus:
      require(major_radius > 0.0 && minor_radius > 0.0, Errc::contract_violation,
              "torus radii must be positive");
      require(minor_radius < major_radius, Errc::contract_violation,
              "torus minor radius must be smaller than major radius");
      require(off + major_radius + minor_radius <= 1.0 + 1e-12, Errc::contract_violation,
              "torus does not fit inside the unit sphere");
      break;
  }
}

AnalyticShape AnalyticShape::make_sphere(double r) {
  AnalyticShape s;
  s.kind = ShapeKind::sphere;
  s.radius = r;
  return s;
}

AnalyticShape AnalyticShape::make_box(const Vec3& half_extents) {
  AnalyticShape s;
  s.kind = ShapeKind::box;
  s.half_extents = half_extents;
  return s;
}

AnalyticShape AnalyticShape::make_torus(double major_r, double minor_r) {
  AnalyticShape s;
  s.kind = ShapeKind::torus;
  s.major_radius = major_r;
  s.minor_radius = minor_r;
  return s;
}

double analytic_sdf(const AnalyticShape& shape, const Vec3& x) {
  const Vec3 p = shape.rotation.transpose() * (x - shape.translation);
  switch (shape.kind) {
    case ShapeKind::sphere:
      return p.norm() - shape.radius;
    case ShapeKind::box: {
      const Vec3 q = p.cwiseAbs() - shape.half_extents;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return outside + inside;
    }
    case ShapeKind::torus: {
      const double ring = std::hypot(p.x(), p.y()) - shape.major_radius;
      return std::hypot(ring, p.z()) - shape.minor_radius;
    }
  }
  fail(Errc::bad_argument, "unknown shape kind");
}

TriMesh shape_mesh(const AnalyticShape& shape, int resolution) {
  shape.validate();
  require(resolution >= 1, Errc::bad_argument, "shape_mesh resolution must be >= 1");
  TriMesh mesh;
  switch (shape.kind) {
    case ShapeKind::sphere:
      mesh = make_icosphere(resolution, shape.radius);
      break;
    case ShapeKind::box:
      mesh = make_box_mesh(shape.half_extents);
      break;
    case ShapeKind::torus:
      mesh = make_torus_mesh(shape.major_radius, shape.minor_radius, 16 * resolution,
                             8 * resolution);
      break;
  }
  for (Vec3& v : mesh.vertices) v = shape.rotation * v + shape.translation;
  return mesh;
}

AnalyticShape parse_shape_spec(const std::string& spec) {
  // "sphere:0.8", "box:0.5,0.4,0.3", "torus:0.5,0.2"
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  std::vector<double> args;
  if (colon != std::string::npos) {
    std::istringstream ss(spec.substr(colon + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        args.push_back(std::stod(tok));
      } catch (const std::exception&) {
        fail(Errc::bad_argument, "bad shape parameter '" + tok + "' in " + spec);
      }
    }
  }
  AnalyticShape s;
  if (name == "sphere") {
    s = AnalyticShape::make_sphere(args.empty() ? 0.8 : args[0]);
  } else if (name == "box") {
    if (args.empty()) {
      s = AnalyticShape::make_box(Vec3(0.5, 0.5, 0.5));
    } else if (args.size() == 1) {
      s = AnalyticShape::make_box(Vec3::Constant(args[0]));
    } else {
      require(args.size() >= 3, Errc::bad_argument, "box needs 1 or 3 extents: " + spec);
      s = AnalyticShape::make_box(Vec3(args[0], args[1], args[2]));
    }
  } else if (name == "torus") {
    if (args.empty()) {
      s = AnalyticShape::make_torus(0.5, 0.2);
    } else {
      require(args.size() >= 2, Errc::bad_argument, "torus needs two radii: " + spec);
      s = AnalyticShape::make_torus(args[0], args[1]);
    }
  } else {
    fail(Errc::bad_argument, "unknown shape '" + name + "' (expected sphere|box|torus)");
  }
  s.validate();
  return s;
}

}  // namespace psdf
