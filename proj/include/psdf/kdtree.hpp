#pragma once

#include <vector>

#include "psdf/common.hpp"

namespace psdf {

// Exact nearest-neighbor queries over a fixed point set.
class PointKdTree {
 public:
  explicit PointKdTree(const std::vector<Vec3>& points);

  struct Result {
    int index = -1;
    double distance = 0.0;
  };

  Result nearest(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;       // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range in order_
  };

  int build(int begin, int end);
  void search(int node, const Vec3& query, Result& best) const;

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace psdf
