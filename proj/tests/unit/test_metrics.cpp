#include <cmath>

#include "doctest.h"
#include "psdf/metrics.hpp"
#include "psdf/mesh.hpp"

#include "json.hpp"

using namespace psdf;

namespace {

TriMesh square(double z) {
  TriMesh m;
  m.vertices = {Vec3(-1, -1, z), Vec3(1, -1, z), Vec3(1, 1, z), Vec3(-1, 1, z)};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

TriMesh scaled(const TriMesh& m, double s) {
  TriMesh out = m;
  for (Vec3& v : out.vertices) v *= s;
  return out;
}

}  // namespace

TEST_CASE("identical meshes score perfectly") {
  const TriMesh sphere = make_icosphere(3);
  CHECK(iou(sphere, sphere, 1) == 100.0);
  CHECK(chamfer(sphere, sphere, 1) <= 1e-8);
  CHECK(f_score(sphere, sphere, 1) == 100.0);
  CHECK(mesh_accuracy(sphere, sphere, 1) < 1e-6);
  const EvalReport rep = evaluate(sphere, sphere, 1);
  CHECK(rep.iou == 100.0);
  CHECK(rep.f_score == 100.0);
  rep.validate();
}

TEST_CASE("concentric spheres reproduce the hand-computed gaps") {
  const TriMesh outer = make_icosphere(4);
  const TriMesh inner = make_icosphere(4, 0.9);
  const double ch = chamfer(outer, inner, 2);
  CHECK(ch == doctest::Approx(2.0).epsilon(0.05));
  const double acc = mesh_accuracy(outer, inner, 2);
  CHECK(acc == doctest::Approx(0.1).epsilon(0.02));
  CHECK(f_score(outer, inner, 2) == 0.0);  // every distance exceeds 0.01
}

TEST_CASE("nested spheres give the volume-ratio IoU") {
  const TriMesh outer = make_icosphere(4);
  const TriMesh half = make_icosphere(4, 0.5);
  const double v = iou(outer, half, 3);
  CHECK(v > 12.0);
  CHECK(v < 13.0);
}

TEST_CASE("empty predictions hit the documented failure values") {
  const TriMesh sphere = make_icosphere(2);
  const TriMesh empty;
  CHECK(iou(sphere, empty, 4) == 0.0);
  CHECK(chamfer(sphere, empty, 4) == 100.0);
  CHECK(f_score(sphere, empty, 4) == 0.0);
  CHECK_THROWS_AS(mesh_accuracy(sphere, empty, 4), Error);
  CHECK_THROWS_AS(evaluate(sphere, empty, 4), Error);
  CHECK_THROWS_AS(iou(empty, sphere, 4), Error);
}

TEST_CASE("f-score threshold sits at 0.01 and the comparison is strict") {
  const TriMesh base = square(0.0);
  // Same-seed sampling makes the clouds congruent, so every nearest-neighbor
  // distance equals the plane offset up to interpolation rounding; offsets a
  // hair on either side of the threshold must flip the score completely.
  CHECK(f_score(base, square(0.01 + 1e-12), 5) == 0.0);
  CHECK(f_score(base, square(0.01 - 1e-12), 5) == 100.0);
  CHECK(chamfer(base, square(0.01), 5) == doctest::Approx(100.0 * 2 * 1e-4).epsilon(1e-9));
}

TEST_CASE("metrics scale the way distances do") {
  const TriMesh gt = make_icosphere(3);
  const TriMesh pred = make_icosphere(3, 0.93);
  const double ch = chamfer(gt, pred, 6);
  const double acc = mesh_accuracy(gt, pred, 6);
  const double v = iou(gt, pred, 6);
  const TriMesh gt2 = scaled(gt, 2.0);
  const TriMesh pred2 = scaled(pred, 2.0);
  CHECK(chamfer(gt2, pred2, 6) == doctest::Approx(4.0 * ch).epsilon(1e-9));
  CHECK(mesh_accuracy(gt2, pred2, 6) == doctest::Approx(2.0 * acc).epsilon(1e-9));
  CHECK(iou(gt2, pred2, 6) == doctest::Approx(v).epsilon(1e-12));
  CHECK(chamfer(pred, gt, 6) == doctest::Approx(ch).epsilon(1e-12));  // symmetric sum
}

TEST_CASE("metrics are deterministic in the seed") {
  const TriMesh gt = make_icosphere(3);
  const TriMesh pred = make_icosphere(3, 0.95);
  CHECK(chamfer(gt, pred, 7, 20000) == chamfer(gt, pred, 7, 20000));
  CHECK(iou(gt, pred, 7, 20000) == iou(gt, pred, 7, 20000));
  CHECK(chamfer(gt, pred, 8, 20000) != chamfer(gt, pred, 7, 20000));
}

TEST_CASE("report rows serialize with all fields") {
  const TriMesh sphere = make_icosphere(2);
  const EvalReport rep = evaluate(sphere, make_icosphere(2, 0.97), 9, 20000);
  const std::string header = eval_csv_header();
  CHECK(header.find("iou") != std::string::npos);
  CHECK(header.find("chamfer") != std::string::npos);
  const std::string row = eval_csv_row("gt.obj", "pred.obj", rep);
  CHECK(row.find("gt.obj") != std::string::npos);

  const auto parsed = nlohmann::json::parse(eval_json_row("gt.obj", "pred.obj", rep));
  CHECK(parsed.at("gt") == "gt.obj");
  CHECK(parsed.at("iou").get<double>() == doctest::Approx(rep.iou));
  CHECK(parsed.at("chamfer").get<double>() == doctest::Approx(rep.chamfer));
  CHECK(parsed.at("f_score").get<double>() == doctest::Approx(rep.f_score));
  CHECK(parsed.at("mesh_accuracy").get<double>() == doctest::Approx(rep.mesh_accuracy));
}
