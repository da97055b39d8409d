#include "psdf/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace psdf {

namespace {
constexpr int kLeafSize = 8;
}

PointKdTree::PointKdTree(const std::vector<Vec3>& points) : points_(points) {
  require(!points_.empty(), Errc::contract_violation, "kd-tree over empty point set");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  root_ = build(0, static_cast<int>(points_.size()));
}

int PointKdTree::build(int begin, int end) {
  Node node;
  if (end - begin <= kLeafSize) {
    node.begin = begin;
    node.end = end;
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    const Vec3& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     return points_[static_cast<std::size_t>(a)][axis] <
                            points_[static_cast<std::size_t>(b)][axis];
                   });
  node.axis = axis;
  node.split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(self)].left = left;
  nodes_[static_cast<std::size_t>(self)].right = right;
  return self;
}

void PointKdTree::search(int node_id, const Vec3& query, Result& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[static_cast<std::size_t>(i)];
      const double d = (points_[static_cast<std::size_t>(idx)] - query).norm();
      if (d < best.distance || (d == best.distance && idx < best.index)) {
        best.distance = d;
        best.index = idx;
      }
    }
    return;
  }
  const double delta = query[node.axis] - node.split;
  const int near = delta <= 0.0 ? node.left : node.right;
  const int far = delta <= 0.0 ? node.right : node.left;
  search(near, query, best);
  if (std::abs(delta) <= best.distance) search(far, query, best);
}

PointKdTree::Result PointKdTree::nearest(const Vec3& query) const {
  Result best;
  best.distance = std::numeric_limits<double>::infinity();
  search(root_, query, best);
  return best;
}

}  // namespace psdf
