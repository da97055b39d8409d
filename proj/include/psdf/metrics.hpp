#pragma once

#include <string>

#include "psdf/mesh.hpp"

namespace psdf {

struct EvalReport {
  double iou = 0.0;      // x100
  double chamfer = 0.0;  // x100
  double f_score = 0.0;  // x100
  double mesh_accuracy = 0.0;
  int sample_count = 100000;
  std::uint64_t seed = 0;

  void validate() const;
};

// 100 * |intersection| / |union| over `count` uniform points in the ground-truth
// bounding box, inside tests via winding number. Empty prediction scores 0.
double iou(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count = 100000);

// 100 * (mean squared nearest-neighbor distance pred->gt + gt->pred) over
// surface clouds of `count` points each, both drawn with the same seed.
// Empty prediction scores 100.
double chamfer(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count = 100000);

// Precision/recall = fraction of nearest-neighbor distances strictly below the
// threshold; 100 * harmonic mean, 0 when either side is 0. Empty prediction
// scores 0.
double f_score(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed, int count = 100000,
               double threshold = 0.01);

// Nearest-rank 90th percentile of pred->gt nearest-neighbor distances.
double mesh_accuracy(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed,
                     int count = 100000);

EvalReport evaluate(const TriMesh& gt, const TriMesh& pred, std::uint64_t seed,
                    int count = 100000);

std::string eval_csv_header();
std::string eval_csv_row(const std::string& gt_name, const std::string& pred_name,
                         const EvalReport& report);
std::string eval_json_row(const std::string& gt_name, const std::string& pred_name,
                          const EvalReport& report);

}  // namespace psdf
