#include "psdf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

#include "psdf/bvh.hpp"
#include "psdf/kdtree.hpp"
#include "psdf/sampling.hpp"

namespace psdf {

namespace {

VectorXd nearest_distances(const std::vector<Vec3>& from, const PointKdTree& to) {
  VectorXd dists(static_cast<Eigen::Index>(from.size()));
  for (std::size_t i = 0; i < from.size(); ++i) {
    dists[static_cast<Eigen::Index>(i)] = to.nearest(from[i]).distance;
  }
  return dists;
}

double percentile_nearest_rank(VectorXd dists, double q) {
  std::sort(dists.begin(), dists.end());
  const auto n = static_cast<double>(dists.size());
  const auto rank = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::ceil(q * n)));
  return dists[rank - 1];
}

void check_count(int count) {
  require(count >= 1, Errc::bad_argument, "sample count must be positive");
}

}  // namespace

void EvalReport::validate() const {
  require(iou >= 0.0 && iou <= 100.0, Errc::contract_violation, "IoU out of range");
  require(f_score >= 0.0 && f_score <= 100.0, Errc::contract_violation, "F-score out of range");
  require(chamfer >= 0.0, Errc::contract_violation, "negative Chamfer distance");
  require(mesh_accuracy >= 0.0, Errc::contract_violation, "negative mesh accuracy");
}

double iou(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count) {
  check_count(count);
  require(!gt.empty(), Errc::bad_argument, "empty ground-truth mesh");
  if (pred.empty()) return 0.0;

  Vec3 lo, hi;
  gt.bounding_box(lo, hi);
  const TriangleBvh gt_bvh(gt);
  const TriangleBvh pred_bvh(pred);

  Rng rng(seed);
  std::int64_t n_inter = 0, n_union = 0;
  for (int i = 0; i < count; ++i) {
    const Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                 rng.uniform(lo.z(), hi.z()));
    const bool in_gt = gt_bvh.contains(p);
    const bool in_pred = pred_bvh.contains(p);
    if (in_gt && in_pred) ++n_inter;
    if (in_gt || in_pred) ++n_union;
  }
  if (n_union == 0) return 0.0;
  return 100.0 * static_cast<double>(n_inter) / static_cast<double>(n_union);
}

double chamfer(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count) {
  check_count(count);
  require(!gt.empty(), Errc::bad_argument, "empty ground-truth mesh");
  if (pred.empty()) return 100.0;

  const SurfaceSamples gt_cloud = sample_surface(gt, count, seed);
  const SurfaceSamples pred_cloud = sample_surface(pred, count, seed);
  const PointKdTree gt_tree(gt_cloud.points);
  const PointKdTree pred_tree(pred_cloud.points);
  const VectorXd pred_to_gt = nearest_distances(pred_cloud.points, gt_tree);
  const VectorXd gt_to_pred = nearest_distances(gt_cloud.points, pred_tree);
  return 100.0 * (pred_to_gt.squaredNorm() / static_cast<double>(count) +
                  gt_to_pred.squaredNorm() / static_cast<double>(count));
}

double f_score(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count,
               double threshold) {
  check_count(count);
  require(threshold > 0.0, Errc::bad_argument, "threshold must be positive");
  require(!gt.empty(), Errc::bad_argument, "empty ground-truth mesh");
  if (pred.empty()) return 0.0;

  const SurfaceSamples gt_cloud = sample_surface(gt, count, seed);
  const SurfaceSamples pred_cloud = sample_surface(pred, count, seed);
  const PointKdTree gt_tree(gt_cloud.points);
  const PointKdTree pred_tree(pred_cloud.points);
  const VectorXd pred_to_gt = nearest_distances(pred_cloud.points, gt_tree);
  const VectorXd gt_to_pred = nearest_distances(gt_cloud.points, pred_tree);
  const double precision =
      static_cast<double>((pred_to_gt.array() < threshold).count()) / static_cast<double>(count);
  const double recall =
      static_cast<double>((gt_to_pred.array() < threshold).count()) / static_cast<double>(count);
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

double mesh_accuracy(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count) {
  check_count(count);
  require(!gt.empty(), Errc::bad_argument, "empty ground-truth mesh");
  require(!pred.empty(), Errc::empty_observation, "empty prediction mesh");

  const SurfaceSamples gt_cloud = sample_surface(gt, count, seed);
  const SurfaceSamples pred_cloud = sample_surface(pred, count, seed);
  const PointKdTree gt_tree(gt_cloud.points);
  return percentile_nearest_rank(nearest_distances(pred_cloud.points, gt_tree), 0.9);
}

EvalReport evaluate(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count) {
  check_count(count);
  require(!gt.empty(), Errc::bad_argument, "empty ground-truth mesh");
  require(!pred.empty(), Errc::empty_observation, "empty prediction mesh");

  EvalReport report;
  report.sample_count = count;
  report.seed = seed;
  report.iou = iou(gt, pred, seed, count);

  const SurfaceSamples gt_cloud = sample_surface(gt, count, seed);
  const SurfaceSamples pred_cloud = sample_surface(pred, count, seed);
  const PointKdTree gt_tree(gt_cloud.points);
  const PointKdTree pred_tree(pred_cloud.points);
  const VectorXd pred_to_gt = nearest_distances(pred_cloud.points, gt_tree);
  const VectorXd gt_to_pred = nearest_distances(gt_cloud.points, pred_tree);

  report.chamfer = 100.0 * (pred_to_gt.squaredNorm() / static_cast<double>(count) +
                            gt_to_pred.squaredNorm() / static_cast<double>(count));
  const double precision =
      static_cast<double>((pred_to_gt.array() < 0.01).count()) / static_cast<double>(count);
  const double recall =
      static_cast<double>((gt_to_pred.array() < 0.01).count()) / static_cast<double>(count);
  report.f_score =
      precision + recall == 0.0 ? 0.0 : 100.0 * 2.0 * precision * recall / (precision + recall);
  report.mesh_accuracy = percentile_nearest_rank(pred_to_gt, 0.9);
  report.validate();
  return report;
}

std::string eval_csv_header() {
  return "gt,pred,iou,chamfer,f_score,mesh_accuracy,samples,seed";
}

std::string eval_csv_row(const std::string& gt_name, const std::string& pred_name,
                         const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << gt_name << ',' << pred_name << ',' << report.iou << ',' << report.chamfer << ','
      << report.f_score << ',' << report.mesh_accuracy << ',' << report.sample_count << ','
      << report.seed;
  return out.str();
}

std::string eval_json_row(const std::string& gt_name, const std::string& pred_name,
                          const EvalReport& report) {
  nlohmann::json j{{"gt", gt_name},
                   {"pred", pred_name},
                   {"iou", report.iou},
                   {"chamfer", report.chamfer},
                   {"f_score", report.f_score},
                   {"mesh_accuracy", report.mesh_accuracy},
                   {"samples", report.sample_count},
                   {"seed", report.seed}};
  return j.dump();
}

}  // namespace psdf
