#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "psdf/kdtree.hpp"
#include "psdf/mesh.hpp"
#include "psdf/reconstruct.hpp"
#include "psdf/sampling.hpp"

using namespace psdf;

namespace {

struct TempPath {
  std::filesystem::path path;
  explicit TempPath(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("psdf_unit_" + name);
  }
  ~TempPath() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

}  // namespace

TEST_CASE("icosphere vertices sit on the sphere and the mesh is closed") {
  for (int level : {0, 2, 3}) {
    const TriMesh m = make_icosphere(level, 0.7, Vec3(0.1, -0.2, 0.3));
    CHECK(static_cast<int>(m.triangles.size()) == 20 * (1 << (2 * level)));
    for (const Vec3& v : m.vertices) CHECK((v - Vec3(0.1, -0.2, 0.3)).norm() == doctest::Approx(0.7).epsilon(1e-12));
    CHECK_FALSE(has_open_edges(m));
    CHECK(is_edge_manifold(m));
  }
  CHECK_THROWS_AS(make_icosphere(10), Error);
  CHECK_THROWS_AS(make_icosphere(-1), Error);
}

TEST_CASE("box mesh area and closedness") {
  const Vec3 h(0.5, 0.4, 0.3);
  const TriMesh m = make_box_mesh(h);
  CHECK(m.triangles.size() == 12);
  CHECK_FALSE(has_open_edges(m));
  CHECK(is_edge_manifold(m));
  const double area = 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
  CHECK(m.total_area() == doctest::Approx(area).epsilon(1e-12));
}

TEST_CASE("torus vertices lie on the tube surface") {
  const TriMesh m = make_torus_mesh(0.6, 0.25);
  CHECK_FALSE(has_open_edges(m));
  CHECK(is_edge_manifold(m));
  for (const Vec3& v : m.vertices) {
    const double ring = std::hypot(v.x(), v.y()) - 0.6;
    CHECK(std::hypot(ring, v.z()) == doctest::Approx(0.25).epsilon(1e-9));
  }
}

TEST_CASE("normalize_unit_sphere centers the bounding box and scales to norm 1") {
  const TriMesh m = make_box_mesh(Vec3(0.5, 0.4, 0.3), Vec3(2.0, -1.0, 0.5));
  const NormalizeResult norm = normalize_unit_sphere(m);
  Vec3 lo, hi;
  norm.mesh.bounding_box(lo, hi);
  CHECK((lo + hi).norm() == doctest::Approx(0.0).epsilon(1e-12));
  double max_norm = 0.0;
  for (const Vec3& v : norm.mesh.vertices) max_norm = std::max(max_norm, v.norm());
  CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    const Vec3 mapped = (m.vertices[i] - norm.offset) * norm.scale;
    CHECK((mapped - norm.mesh.vertices[i]).norm() < 1e-12);
  }
}

TEST_CASE("obj save/load round trip") {
  const TriMesh m = make_icosphere(2, 0.9);
  TempPath tmp("roundtrip.obj");
  save_obj(m, tmp.path);
  const TriMesh back = load_mesh(tmp.path);
  REQUIRE(back.vertices.size() == m.vertices.size());
  REQUIRE(back.triangles.size() == m.triangles.size());
  for (std::size_t i = 0; i < m.vertices.size(); ++i)
    CHECK((back.vertices[i] - m.vertices[i]).norm() < 1e-9);
  for (std::size_t t = 0; t < m.triangles.size(); ++t)
    CHECK(back.triangles[t] == m.triangles[t]);
  CHECK_THROWS_AS(load_mesh("/nonexistent/mesh.obj"), Error);
}

TEST_CASE("mesh sdf sign and magnitude on analytic solids") {
  const TriMesh sphere = make_icosphere(4);
  const MeshSdf sdf(sphere);
  CHECK(sdf.watertight());
  CHECK(sdf(Vec3(0, 0, 0)) == doctest::Approx(-1.0).epsilon(2e-3));
  CHECK(sdf(Vec3(0, 0, 2)) == doctest::Approx(1.0).epsilon(2e-3));
  CHECK(sdf(Vec3(0.5, 0, 0)) < 0.0);
  CHECK(sdf(Vec3(1.5, 0, 0)) > 0.0);

  const TriMesh box = make_box_mesh(Vec3(0.5, 0.4, 0.3));
  const Vec3 q(0.9, 0.8, 0.7);
  const double expect = (q - Vec3(0.5, 0.4, 0.3)).norm();
  CHECK(signed_distance(box, q) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(signed_distance(box, Vec3(0.45, 0.0, 0.0)) == doctest::Approx(-0.05).epsilon(1e-9));
}

TEST_CASE("surface sampling is on-surface, unit-normal, and area-weighted") {
  const TriMesh sphere = make_icosphere(3);
  const SurfaceSamples s = sample_surface(sphere, 4000, 7);
  REQUIRE(s.size() == 4000);
  const MeshSdf sdf(sphere);
  int pos_x = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(std::abs(sdf(s.points[i])) < 1e-9);
    CHECK(s.normals[i].norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s.normals[i].dot(s.points[i]) > 0.0);  // outward on a sphere
    if (s.points[i].x() > 0) ++pos_x;
  }
  // Half-space counts stay within 5 sigma of the binomial mean.
  CHECK(std::abs(pos_x - 2000) < 5 * std::sqrt(4000 * 0.25));
}

TEST_CASE("sdf sample sets honor the near/uniform split and the truncation band") {
  const TriMesh sphere = make_icosphere(4);
  const SdfSampleSet set = sample_sdf_set(sphere, 2000, 0.1, 11);
  REQUIRE(set.size() == 2000);
  CHECK(set.truncation == doctest::Approx(0.1));
  int near = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(set.sdf[i] <= 0.1 + 1e-12);
    CHECK(set.sdf[i] >= -0.1 - 1e-12);
    CHECK(set.points[i].norm() <= 1.0 + 0.1);
    if (std::abs(set.points[i].norm() - 1.0) < 0.03) ++near;
  }
  CHECK(near >= 1800);  // 95% of samples hug the surface
  const MeshSdf sdf(sphere);
  for (std::size_t i = 0; i < set.size(); i += 97) {
    const double expect = std::clamp(sdf(set.points[i]), -0.1, 0.1);
    CHECK(set.sdf[i] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("sdf noise is clamped and has the requested spread") {
  const TriMesh sphere = make_icosphere(3);
  const SdfSampleSet clean = sample_sdf_set(sphere, 5000, 0.1, 3);
  const SdfSampleSet same = add_sdf_noise(clean, 0.0, 5);
  CHECK(std::equal(same.sdf.begin(), same.sdf.end(), clean.sdf.begin()));
  const SdfSampleSet noisy = add_sdf_noise(clean, 0.01, 5);
  double mean_abs = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    CHECK(std::abs(noisy.sdf[i]) <= 0.1 + 1e-12);
    mean_abs += std::abs(noisy.sdf[i] - clean.sdf[i]);
  }
  mean_abs /= static_cast<double>(clean.size());
  // E|N(0, sigma)| = sigma * sqrt(2/pi); clamping shaves a little off.
  CHECK(mean_abs == doctest::Approx(0.01 * std::sqrt(2.0 / M_PI)).epsilon(0.1));
  CHECK_THROWS_AS(add_sdf_noise(clean, -0.1, 5), Error);
}

TEST_CASE("kd-tree matches brute force nearest neighbors") {
  Rng rng(21);
  std::vector<Vec3> pts;
  for (int i = 0; i < 1500; ++i) pts.push_back(rng.normal3());
  const PointKdTree tree(pts);
  for (int q = 0; q < 300; ++q) {
    const Vec3 query = 1.5 * rng.normal3();
    int best = -1;
    double best_d = 1e300;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
      const double d = (pts[static_cast<std::size_t>(i)] - query).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    const PointKdTree::Result r = tree.nearest(query);
    CHECK(r.index == best);
    CHECK(r.distance == doctest::Approx(best_d).epsilon(1e-12));
  }
}

TEST_CASE("partial renders see only the camera-facing side") {
  const TriMesh sphere = make_icosphere(4);
  CameraView cam;
  const PartialObservation obs = render_partial(sphere, cam, 13);
  CHECK((obs.camera_origin - Vec3(0, 0, 2)).norm() == 0.0);
  CHECK(obs.samples.size() > 500);
  for (std::size_t i = 0; i < obs.samples.size(); ++i) {
    CHECK(std::abs(obs.samples.points[i].norm() - 1.0) < 2e-3);
    // Front-facing: the normal points back toward the camera.
    CHECK(obs.samples.normals[i].dot(cam.origin - obs.samples.points[i]) > 0.0);
  }
}

TEST_CASE("sample set and surface file round trips") {
  const TriMesh sphere = make_icosphere(3);
  const SdfSampleSet set = sample_sdf_set(sphere, 500, 0.08, 17);
  TempPath tmp("set.pnsd");
  save_sdf_samples(set, tmp.path);
  const SdfSampleSet back = load_sdf_samples(tmp.path);
  REQUIRE(back.size() == set.size());
  CHECK(back.truncation == doctest::Approx(set.truncation).epsilon(1e-6));
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK((back.points[i] - set.points[i]).norm() < 1e-6);
    CHECK(back.sdf[i] == doctest::Approx(set.sdf[i]).epsilon(1e-6));
  }

  const SurfaceSamples surf = sample_surface(sphere, 400, 19);
  TempPath tmp2("surf.pnss");
  save_surface_samples(surf, tmp2.path);
  const SurfaceSamples sback = load_surface_samples(tmp2.path);
  REQUIRE(sback.size() == surf.size());
  for (std::size_t i = 0; i < surf.size(); ++i) {
    CHECK((sback.points[i] - surf.points[i]).norm() < 1e-6);
    CHECK((sback.normals[i] - surf.normals[i]).norm() < 1e-6);
  }
  CHECK_THROWS_AS(load_sdf_samples("/nonexistent.pnsd"), Error);
}

TEST_CASE("marching cubes reproduces a plane exactly") {
  const auto plane = [](const std::vector<Vec3>& pts) {
    VectorXd out(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) out[static_cast<Eigen::Index>(i)] = pts[i].x() - 0.3;
    return out;
  };
  const TriMesh m = marching_cubes(plane, 33);
  REQUIRE_FALSE(m.empty());
  double area = 0.0;
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    area += m.triangle_area(static_cast<int>(t));
    CHECK(m.triangle_normal(static_cast<int>(t)).dot(Vec3(1, 0, 0)) > 0.999999);
  }
  for (const Vec3& v : m.vertices) CHECK(std::abs(v.x() - 0.3) < 1e-12);
  CHECK(area == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("marching cubes sphere is watertight and accurate") {
  const auto sphere = [](const std::vector<Vec3>& pts) {
    VectorXd out(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) out[static_cast<Eigen::Index>(i)] = pts[i].norm() - 0.8;
    return out;
  };
  const TriMesh m = marching_cubes(sphere, 64);
  REQUIRE_FALSE(m.empty());
  CHECK_FALSE(has_open_edges(m));
  CHECK(is_edge_manifold(m));
  double worst = 0.0;
  for (const Vec3& v : m.vertices) worst = std::max(worst, std::abs(v.norm() - 0.8));
  CHECK(worst < 1e-3);
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    const Vec3 centroid = (m.vertices[static_cast<std::size_t>(tri[0])] +
                           m.vertices[static_cast<std::size_t>(tri[1])] +
                           m.vertices[static_cast<std::size_t>(tri[2])]) / 3.0;
    CHECK(m.triangle_normal(static_cast<int>(t)).dot(centroid) > 0.0);
  }
}

TEST_CASE("marching cubes with no sign change is empty") {
  const auto constant = [](double value) {
    return [value](const std::vector<Vec3>& pts) {
      return VectorXd::Constant(static_cast<Eigen::Index>(pts.size()), value).eval();
    };
  };
  CHECK(marching_cubes(constant(1.0), 16).empty());
  CHECK(marching_cubes(constant(-1.0), 16).empty());
}

TEST_CASE("marching cubes clips surfaces that leave the grid") {
  const auto big = [](const std::vector<Vec3>& pts) {
    VectorXd out(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) out[static_cast<Eigen::Index>(i)] = pts[i].norm() - 1.4;
    return out;
  };
  const TriMesh m = marching_cubes(big, 32);
  REQUIRE_FALSE(m.empty());
  CHECK(has_open_edges(m));  // the sphere pierces the domain boundary
  for (const Vec3& v : m.vertices) {
    CHECK(v.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    CHECK(std::abs(v.norm() - 1.4) < 5e-3);
  }
}
