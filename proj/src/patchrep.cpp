#include "psdf/patchrep.hpp"

#include <algorithm>

namespace psdf {

namespace {

Mat3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}

Mat3 rot_y(double b) {
  Mat3 m;
  m << std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b);
  return m;
}

Mat3 rot_z(double c) {
  Mat3 m;
  m << std::cos(c), -std::sin(c), 0, std::sin(c), std::cos(c), 0, 0, 0, 1;
  return m;
}

Mat3 drot_x(double a) {
  Mat3 m;
  m << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
  return m;
}

Mat3 drot_y(double b) {
  Mat3 m;
  m << -std::sin(b), 0, std::cos(b), 0, 0, 0, -std::cos(b), 0, -std::sin(b);
  return m;
}

Mat3 drot_z(double c) {
  Mat3 m;
  m << -std::sin(c), -std::cos(c), 0, std::cos(c), -std::sin(c), 0, 0, 0, 0;
  return m;
}

}  // namespace

Mat3 euler_xyz(const Vec3& phi) { return rot_x(phi[0]) * rot_y(phi[1]) * rot_z(phi[2]); }

std::array<Mat3, 3> euler_xyz_derivs(const Vec3& phi) {
  return {drot_x(phi[0]) * rot_y(phi[1]) * rot_z(phi[2]),
          rot_x(phi[0]) * drot_y(phi[1]) * rot_z(phi[2]),
          rot_x(phi[0]) * rot_y(phi[1]) * drot_z(phi[2])};
}

Vec3 euler_from_matrix(const Mat3& R) {
  const double sb = std::clamp(R(0, 2), -1.0, 1.0);
  const double b = std::asin(sb);
  if (std::abs(sb) > 1.0 - 1e-12) {
    // Gimbal lock: cos(b) = 0; only a +/- c is determined, pick c = 0.
    return Vec3(std::atan2(R(2, 1), R(1, 1)), b, 0.0);
  }
  return Vec3(std::atan2(-R(1, 2), R(2, 2)), b, std::atan2(-R(0, 1), R(0, 0)));
}

Vec3 euler_aligning_z(const Vec3& n) {
  require(std::abs(n.norm() - 1.0) < 1e-6, Errc::bad_argument,
          "euler_aligning_z expects a unit vector");
  // R(phi) * z = (sin b, -sin a * cos b, cos a * cos b).
  return Vec3(std::atan2(-n.y(), n.z()), std::asin(std::clamp(n.x(), -1.0, 1.0)), 0.0);
}

void PatchExtrinsics::validate() const {
  require(std::isfinite(r) && c.allFinite() && phi.allFinite(), Errc::numeric_error,
          "non-finite patch extrinsics");
  require(r >= kRadiusMin, Errc::contract_violation, "patch radius below minimum");
}

void ShapeCodes::validate(int n_z) const {
  require(latents.size() == extrinsics.size(), Errc::contract_violation,
          "latent/extrinsics count mismatch");
  for (const auto& z : latents) {
    require(z.size() == n_z, Errc::contract_violation, "latent length != N_z");
    require(z.allFinite(), Errc::numeric_error, "non-finite latent");
  }
  for (const auto& e : extrinsics) e.validate();
}

std::vector<PatchExtrinsics> init_extrinsics(const SurfaceSamples& surface, int n_patches,
                                             std::uint64_t seed) {
  const int n = static_cast<int>(surface.points.size());
  require(n > 0, Errc::contract_violation, "init_extrinsics on empty surface samples");
  require(n_patches >= 1, Errc::bad_argument, "n_patches must be >= 1");
  require(n_patches <= n, Errc::bad_argument,
          "more patches than surface points (" + std::to_string(n_patches) + " > " +
              std::to_string(n) + ")");
  require(surface.normals.size() == surface.points.size(), Errc::contract_violation,
          "surface samples missing normals");

  Rng rng(seed);
  std::vector<int> centers;
  centers.reserve(static_cast<std::size_t>(n_patches));
  centers.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n))));

  std::vector<double> dist(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
  for (int k = 1; k < n_patches; ++k) {
    const Vec3& last = surface.points[static_cast<std::size_t>(centers.back())];
    int best = 0;
    double best_dist = -1.0;
    for (int i = 0; i < n; ++i) {
      double& d = dist[static_cast<std::size_t>(i)];
      d = std::min(d, (surface.points[static_cast<std::size_t>(i)] - last).norm());
      if (d > best_dist) {  // strict: ties keep the lowest index
        best_dist = d;
        best = i;
      }
    }
    centers.push_back(best);
  }

  // Radius: max distance among points whose nearest center is this one.
  std::vector<double> radius(static_cast<std::size_t>(n_patches), 0.0);
  for (int i = 0; i < n; ++i) {
    int owner = 0;
    double owner_dist = std::numeric_limits<double>::infinity();
    for (int p = 0; p < n_patches; ++p) {
      const double d = (surface.points[static_cast<std::size_t>(i)] -
                        surface.points[static_cast<std::size_t>(centers[static_cast<std::size_t>(p)])])
                           .norm();
      if (d < owner_dist) {
        owner_dist = d;
        owner = p;
      }
    }
    radius[static_cast<std::size_t>(owner)] =
        std::max(radius[static_cast<std::size_t>(owner)], owner_dist);
  }

  std::vector<PatchExtrinsics> out(static_cast<std::size_t>(n_patches));
  for (int p = 0; p < n_patches; ++p) {
    PatchExtrinsics& e = out[static_cast<std::size_t>(p)];
    const int ci = centers[static_cast<std::size_t>(p)];
    e.c = surface.points[static_cast<std::size_t>(ci)];
    e.r = std::max(radius[static_cast<std::size_t>(p)], kRadiusMin);
    // Normal at the surface point nearest the center: the center itself.
    const Vec3 normal = surface.normals[static_cast<std::size_t>(ci)].normalized();
    e.phi = euler_aligning_z(normal);
  }
  return out;
}

Vec3 to_local_point(const PatchExtrinsics& e, const Vec3& x) {
  require(e.r >= kRadiusMin, Errc::contract_violation, "patch radius below minimum");
  return euler_xyz(e.phi).transpose() * (x - e.c) / e.r;
}

ToLocalResult to_local(const PatchExtrinsics& e, const Vec3& x) {
  require(e.r >= kRadiusMin, Errc::contract_violation, "patch radius below minimum");
  ToLocalResult res;
  res.R = euler_xyz(e.phi);
  const Vec3 delta = x - e.c;
  res.x_local = res.R.transpose() * delta / e.r;
  res.dlocal_dx = res.R.transpose() / e.r;
  res.dlocal_dc = -res.dlocal_dx;
  res.dlocal_dr = -res.x_local / e.r;
  const auto dR = euler_xyz_derivs(e.phi);
  for (int k = 0; k < 3; ++k) {
    res.dlocal_dphi.col(k) = dR[static_cast<std::size_t>(k)].transpose() * delta / e.r;
  }
  return res;
}

std::vector<int> patch_membership(const ShapeCodes& codes, const Vec3& x) {
  std::vector<int> members;
  for (int p = 0; p < codes.n_patches(); ++p) {
    const auto& e = codes.extrinsics[static_cast<std::size_t>(p)];
    if (e.r >= kRadiusMin && (x - e.c).norm() < e.r) members.push_back(p);
  }
  return members;
}

double blend_weight(double dist, double radius) {
  const double q = dist / radius;
  return std::exp(-4.5 * q * q) - std::exp(-4.5);
}

void blend_weight_grad(double dist, double radius, double& dw_ddist, double& dw_dradius) {
  const double q = dist / radius;
  const double core = std::exp(-4.5 * q * q);
  dw_ddist = core * (-9.0 * dist / (radius * radius));
  dw_dradius = core * (9.0 * dist * dist / (radius * radius * radius));
}

BlendGrads BlendGrads::zeros_like(const ShapeCodes& codes) {
  BlendGrads g;
  const auto n = codes.latents.size();
  g.dz.resize(n);
  for (std::size_t p = 0; p < n; ++p) g.dz[p] = VectorXd::Zero(codes.latents[p].size());
  g.dc.assign(n, Vec3::Zero());
  g.dr.assign(n, 0.0);
  g.dphi.assign(n, Vec3::Zero());
  return g;
}

BlendGrads& BlendGrads::operator+=(const BlendGrads& other) {
  for (std::size_t p = 0; p < dz.size(); ++p) {
    dz[p] += other.dz[p];
    dc[p] += other.dc[p];
    dr[p] += other.dr[p];
    dphi[p] += other.dphi[p];
  }
  return *this;
}

BlendGrads& BlendGrads::operator*=(double s) {
  for (std::size_t p = 0; p < dz.size(); ++p) {
    dz[p] *= s;
    dc[p] *= s;
    dr[p] *= s;
    dphi[p] *= s;
  }
  return *this;
}

namespace {
constexpr int kDecoderChunk = 4096;
}

BlendContext::BlendContext(const ShapeCodes& codes, const DecoderWeights& w,
                           const std::vector<Vec3>& points)
    : codes_(codes), w_(w), points_(points) {
  require(codes.latents.size() == codes.extrinsics.size(), Errc::contract_violation,
          "latent/extrinsics count mismatch");
  for (const auto& z : codes.latents) {
    require(z.size() == w.n_z, Errc::contract_violation, "latent length != N_z");
  }
  const int n_points = static_cast<int>(points.size());
  const int n_patches = codes.n_patches();
  batches_.resize(static_cast<std::size_t>(n_patches));
  weight_sum_ = VectorXd::Zero(n_points);
  VectorXd accum = VectorXd::Zero(n_points);

  for (int p = 0; p < n_patches; ++p) {
    PatchBatch& batch = batches_[static_cast<std::size_t>(p)];
    const auto& e = codes.extrinsics[static_cast<std::size_t>(p)];
    // Regressed extrinsics may carry degenerate radii; such patches cover nothing.
    if (!(e.r >= kRadiusMin)) continue;
    for (int k = 0; k < n_points; ++k) {
      if ((points[static_cast<std::size_t>(k)] - e.c).norm() < e.r) {
        batch.point_index.push_back(k);
      }
    }
    const int m = static_cast<int>(batch.point_index.size());
    if (m == 0) continue;
    batch.x_local.resize(3, m);
    batch.w.resize(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const Vec3& x = points[static_cast<std::size_t>(batch.point_index[static_cast<std::size_t>(j)])];
      batch.x_local.col(j) = to_local_point(e, x);
      batch.w[static_cast<std::size_t>(j)] = blend_weight((x - e.c).norm(), e.r);
    }
    batch.f.resize(m);
    const VectorXd& z = codes.latents[static_cast<std::size_t>(p)];
    for (int start = 0; start < m; start += kDecoderChunk) {
      const int len = std::min(kDecoderChunk, m - start);
      MatrixXd input(w.input_dim(), len);
      input.topRows(w.n_z).colwise() = z;
      input.bottomRows(3) = batch.x_local.middleCols(start, len);
      batch.f.segment(start, len) = decoder_forward_batch(w, input);
    }
    for (int j = 0; j < m; ++j) {
      const int k = batch.point_index[static_cast<std::size_t>(j)];
      weight_sum_[k] += batch.w[static_cast<std::size_t>(j)];
      accum[k] += batch.w[static_cast<std::size_t>(j)] * batch.f[j];
    }
  }

  g_.resize(n_points);
  for (int k = 0; k < n_points; ++k) {
    g_[k] = weight_sum_[k] > 0.0 ? accum[k] / weight_sum_[k] : 1.0;
  }
}

void BlendContext::backward(const VectorXd& upstream, BlendGrads& grads,
                            DecoderGrads* dtheta) const {
  require(upstream.size() == g_.size(), Errc::contract_violation,
          "blend upstream size mismatch");
  DecoderGrads scratch;
  for (int p = 0; p < codes_.n_patches(); ++p) {
    const PatchBatch& batch = batches_[static_cast<std::size_t>(p)];
    const int m = static_cast<int>(batch.point_index.size());
    if (m == 0) continue;
    const auto& e = codes_.extrinsics[static_cast<std::size_t>(p)];
    const VectorXd& z = codes_.latents[static_cast<std::size_t>(p)];

    // Weight-path gradients and the upstream for each decoder evaluation.
    Eigen::RowVectorXd f_upstream(m);
    for (int j = 0; j < m; ++j) {
      const int k = batch.point_index[static_cast<std::size_t>(j)];
      const double W = weight_sum_[k];
      if (W <= 0.0) {
        f_upstream(j) = 0.0;
        continue;
      }
      const double u = upstream[k];
      const double wj = batch.w[static_cast<std::size_t>(j)];
      f_upstream(j) = u * wj / W;

      const double dg_dw = (batch.f[j] - g_[k]) / W;
      const Vec3& x = points_[static_cast<std::size_t>(k)];
      const double dist = (x - e.c).norm();
      double dw_ddist = 0.0, dw_dr = 0.0;
      blend_weight_grad(dist, e.r, dw_ddist, dw_dr);
      grads.dr[static_cast<std::size_t>(p)] += u * dg_dw * dw_dr;
      if (dist > 0.0) {
        const Vec3 ddist_dc = (e.c - x) / dist;
        grads.dc[static_cast<std::size_t>(p)] += u * dg_dw * dw_ddist * ddist_dc;
      }
    }

    // Decoder path, chunked so the activation cache stays small.
    for (int start = 0; start < m; start += kDecoderChunk) {
      const int len = std::min(kDecoderChunk, m - start);
      MatrixXd input(w_.input_dim(), len);
      input.topRows(w_.n_z).colwise() = z;
      input.bottomRows(3) = batch.x_local.middleCols(start, len);
      DecoderBatchCache cache;
      decoder_forward_batch(w_, input, &cache);
      const MatrixXd dinput =
          decoder_backward_batch(w_, cache, f_upstream.segment(start, len), scratch);
      if (dtheta) *dtheta += scratch;
      grads.dz[static_cast<std::size_t>(p)] += dinput.topRows(w_.n_z).rowwise().sum();
      for (int j = 0; j < len; ++j) {
        const int k = batch.point_index[static_cast<std::size_t>(start + j)];
        const Vec3 dx_local = dinput.col(j).tail(3);
        const ToLocalResult tl = to_local(e, points_[static_cast<std::size_t>(k)]);
        grads.dc[static_cast<std::size_t>(p)] += tl.dlocal_dc.transpose() * dx_local;
        grads.dr[static_cast<std::size_t>(p)] += tl.dlocal_dr.dot(dx_local);
        grads.dphi[static_cast<std::size_t>(p)] += tl.dlocal_dphi.transpose() * dx_local;
      }
    }
  }
}

double blend_sdf(const ShapeCodes& codes, const DecoderWeights& w, const Vec3& x) {
  return BlendContext(codes, w, {x}).values()(0);
}

VectorXd blend_sdf_batch(const ShapeCodes& codes, const DecoderWeights& w,
                         const std::vector<Vec3>& points) {
  return BlendContext(codes, w, points).values();
}

}  // namespace psdf
