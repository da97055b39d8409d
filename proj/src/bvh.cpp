#include "psdf/bvh.hpp"

#include <algorithm>
#include <numeric>

namespace psdf {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {

constexpr int kLeafSize = 4;
constexpr double kBarnesHutBeta = 2.5;

double aabb_sq_distance(const Vec3& lo, const Vec3& hi, const Vec3& x) {
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double v = std::max({lo[k] - x[k], 0.0, x[k] - hi[k]});
    d2 += v * v;
  }
  return d2;
}

bool aabb_ray_hit(const Vec3& lo, const Vec3& hi, const Vec3& origin, const Vec3& inv_dir,
                  double t_max, double& t_near) {
  double t0 = 0.0, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    double ta = (lo[k] - origin[k]) * inv_dir[k];
    double tb = (hi[k] - origin[k]) * inv_dir[k];
    if (inv_dir[k] < 0.0) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  t_near = t0;
  return true;
}

// Moller-Trumbore; returns t >= 0 on hit.
bool ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                  const Vec3& c, double& t_out) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return false;
  const double inv_det = 1.0 / det;
  const Vec3 tv = origin - a;
  const double u = tv.dot(pv) * inv_det;
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv_det;
  if (v < 0.0 || u + v > 1.0) return false;
  const double t = e2.dot(qv) * inv_det;
  if (t < 0.0) return false;
  t_out = t;
  return true;
}

}  // namespace

TriangleBvh::TriangleBvh(const TriMesh& mesh) {
  require(!mesh.triangles.empty(), Errc::contract_violation, "BVH over empty mesh");
  const int n = static_cast<int>(mesh.triangles.size());
  tri_a_.resize(static_cast<std::size_t>(n));
  tri_b_.resize(static_cast<std::size_t>(n));
  tri_c_.resize(static_cast<std::size_t>(n));
  tri_n_.resize(static_cast<std::size_t>(n));
  std::vector<Vec3> centroids(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    tri_a_[static_cast<std::size_t>(t)] = mesh.vertices[static_cast<std::size_t>(tri[0])];
    tri_b_[static_cast<std::size_t>(t)] = mesh.vertices[static_cast<std::size_t>(tri[1])];
    tri_c_[static_cast<std::size_t>(t)] = mesh.vertices[static_cast<std::size_t>(tri[2])];
    tri_n_[static_cast<std::size_t>(t)] = mesh.triangle_normal(t);
    centroids[static_cast<std::size_t>(t)] =
        (tri_a_[static_cast<std::size_t>(t)] + tri_b_[static_cast<std::size_t>(t)] +
         tri_c_[static_cast<std::size_t>(t)]) / 3.0;
  }
  order_.resize(static_cast<std::size_t>(n));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(static_cast<std::size_t>(2 * n));
  root_ = build(0, n, centroids);
}

int TriangleBvh::build(int begin, int end, std::vector<Vec3>& centroids) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  Vec3 weighted_centroid = Vec3::Zero();
  double total_area = 0.0;
  for (int i = begin; i < end; ++i) {
    const int t = order_[static_cast<std::size_t>(i)];
    const Vec3 &a = tri_a_[static_cast<std::size_t>(t)], &b = tri_b_[static_cast<std::size_t>(t)],
               &c = tri_c_[static_cast<std::size_t>(t)];
    node.lo = node.lo.cwiseMin(a).cwiseMin(b).cwiseMin(c);
    node.hi = node.hi.cwiseMax(a).cwiseMax(b).cwiseMax(c);
    const Vec3 cross = (b - a).cross(c - a);
    const double area = 0.5 * cross.norm();
    node.dipole += 0.5 * cross;  // area * unit normal
    weighted_centroid += area * (a + b + c) / 3.0;
    total_area += area;
  }
  node.mass_center = total_area > 0.0 ? Vec3(weighted_centroid / total_area)
                                      : Vec3(0.5 * (node.lo + node.hi));
  double r2 = 0.0;
  for (int i = begin; i < end; ++i) {
    const int t = order_[static_cast<std::size_t>(i)];
    r2 = std::max({r2, (tri_a_[static_cast<std::size_t>(t)] - node.mass_center).squaredNorm(),
                   (tri_b_[static_cast<std::size_t>(t)] - node.mass_center).squaredNorm(),
                   (tri_c_[static_cast<std::size_t>(t)] - node.mass_center).squaredNorm()});
  }
  node.radius = std::sqrt(r2);

  if (end - begin <= kLeafSize) {
    node.begin = begin;
    node.count = end - begin;
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }

  Vec3 clo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 chi = -clo;
  for (int i = begin; i < end; ++i) {
    const Vec3& c = centroids[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
    clo = clo.cwiseMin(c);
    chi = chi.cwiseMax(c);
  }
  int axis = 0;
  (chi - clo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int x, int y) {
                     return centroids[static_cast<std::size_t>(x)][axis] <
                            centroids[static_cast<std::size_t>(y)][axis];
                   });
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid, centroids);
  const int right = build(mid, end, centroids);
  nodes_[static_cast<std::size_t>(self)].left = left;
  nodes_[static_cast<std::size_t>(self)].right = right;
  return self;
}

void TriangleBvh::closest_point_rec(int node_id, const Vec3& x, ClosestPointResult& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.left < 0) {
    for (int i = node.begin; i < node.begin + node.count; ++i) {
      const int t = order_[static_cast<std::size_t>(i)];
      const Vec3 q = closest_point_on_triangle(x, tri_a_[static_cast<std::size_t>(t)],
                                               tri_b_[static_cast<std::size_t>(t)],
                                               tri_c_[static_cast<std::size_t>(t)]);
      const double d = (q - x).norm();
      if (d < best.distance) {
        best.distance = d;
        best.point = q;
        best.triangle = t;
      }
    }
    return;
  }
  const double dl = aabb_sq_distance(nodes_[static_cast<std::size_t>(node.left)].lo,
                                     nodes_[static_cast<std::size_t>(node.left)].hi, x);
  const double dr = aabb_sq_distance(nodes_[static_cast<std::size_t>(node.right)].lo,
                                     nodes_[static_cast<std::size_t>(node.right)].hi, x);
  const int first = dl <= dr ? node.left : node.right;
  const int second = dl <= dr ? node.right : node.left;
  const double dfirst = std::min(dl, dr), dsecond = std::max(dl, dr);
  if (dfirst < best.distance * best.distance) closest_point_rec(first, x, best);
  if (dsecond < best.distance * best.distance) closest_point_rec(second, x, best);
}

ClosestPointResult TriangleBvh::closest_point(const Vec3& x) const {
  ClosestPointResult best;
  best.distance = std::numeric_limits<double>::infinity();
  closest_point_rec(root_, x, best);
  return best;
}

void TriangleBvh::raycast_rec(int node_id, const Vec3& origin, const Vec3& inv_dir,
                              const Vec3& dir, double& t_best, int& tri_best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  double t_near = 0.0;
  if (!aabb_ray_hit(node.lo, node.hi, origin, inv_dir, t_best, t_near)) return;
  if (node.left < 0) {
    for (int i = node.begin; i < node.begin + node.count; ++i) {
      const int t = order_[static_cast<std::size_t>(i)];
      double th = 0.0;
      if (ray_triangle(origin, dir, tri_a_[static_cast<std::size_t>(t)],
                       tri_b_[static_cast<std::size_t>(t)], tri_c_[static_cast<std::size_t>(t)],
                       th) &&
          th < t_best) {
        t_best = th;
        tri_best = t;
      }
    }
    return;
  }
  double tl = 0.0, tr = 0.0;
  const bool hl = aabb_ray_hit(nodes_[static_cast<std::size_t>(node.left)].lo,
                               nodes_[static_cast<std::size_t>(node.left)].hi, origin, inv_dir,
                               t_best, tl);
  const bool hr = aabb_ray_hit(nodes_[static_cast<std::size_t>(node.right)].lo,
                               nodes_[static_cast<std::size_t>(node.right)].hi, origin, inv_dir,
                               t_best, tr);
  if (hl && hr) {
    const int first = tl <= tr ? node.left : node.right;
    const int second = tl <= tr ? node.right : node.left;
    raycast_rec(first, origin, inv_dir, dir, t_best, tri_best);
    raycast_rec(second, origin, inv_dir, dir, t_best, tri_best);
  } else if (hl) {
    raycast_rec(node.left, origin, inv_dir, dir, t_best, tri_best);
  } else if (hr) {
    raycast_rec(node.right, origin, inv_dir, dir, t_best, tri_best);
  }
}

std::optional<RayHit> TriangleBvh::raycast(const Vec3& origin, const Vec3& dir,
                                           double t_max) const {
  require(dir.norm() > 0.0, Errc::bad_argument, "raycast with zero direction");
  const Vec3 d = dir.normalized();
  Vec3 inv_dir;
  for (int k = 0; k < 3; ++k) {
    inv_dir[k] = d[k] != 0.0 ? 1.0 / d[k] : std::numeric_limits<double>::infinity();
  }
  double t_best = t_max;
  int tri_best = -1;
  raycast_rec(root_, origin, inv_dir, d, t_best, tri_best);
  if (tri_best < 0) return std::nullopt;
  RayHit hit;
  hit.t = t_best;
  hit.triangle = tri_best;
  hit.point = origin + t_best * d;
  hit.normal = tri_n_[static_cast<std::size_t>(tri_best)];
  return hit;
}

double TriangleBvh::exact_winding(int node_id, const Vec3& x) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  double w = 0.0;
  for (int i = node.begin; i < node.begin + node.count; ++i) {
    const int t = order_[static_cast<std::size_t>(i)];
    const Vec3 a = tri_a_[static_cast<std::size_t>(t)] - x;
    const Vec3 b = tri_b_[static_cast<std::size_t>(t)] - x;
    const Vec3 c = tri_c_[static_cast<std::size_t>(t)] - x;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double numer = a.dot(b.cross(c));
    const double denom = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    w += 2.0 * std::atan2(numer, denom);
  }
  return w / (4.0 * M_PI);
}

double TriangleBvh::winding_rec(int node_id, const Vec3& x) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  const Vec3 r = node.mass_center - x;
  const double dist = r.norm();
  if (dist > kBarnesHutBeta * node.radius && dist > 0.0) {
    // Far field: single dipole at the area-weighted centroid.
    return node.dipole.dot(r) / (4.0 * M_PI * dist * dist * dist);
  }
  if (node.left < 0) return exact_winding(node_id, x);
  return winding_rec(node.left, x) + winding_rec(node.right, x);
}

double TriangleBvh::winding_number(const Vec3& x) const { return winding_rec(root_, x); }

}  // namespace psdf
