#include "psdf/losses.hpp"

#include <algorithm>

namespace psdf {

void LossWeights::validate() const {
  require(sur >= 0 && cov >= 0 && rot >= 0 && scl >= 0 && var >= 0 && reg >= 0,
          Errc::contract_violation, "loss weights must be non-negative");
  require(t > 0, Errc::contract_violation, "surface threshold must be positive");
  require(sigma_cov > 0, Errc::contract_violation, "coverage kernel width must be positive");
}

LossReport& LossReport::operator+=(const LossReport& other) {
  total += other.total;
  recon += other.recon;
  sur += other.sur;
  cov += other.cov;
  rot += other.rot;
  scl += other.scl;
  var += other.var;
  reg += other.reg;
  free_space += other.free_space;
  tether += other.tether;
  return *this;
}

LossReport& LossReport::operator*=(double s) {
  total *= s;
  recon *= s;
  sur *= s;
  cov *= s;
  rot *= s;
  scl *= s;
  var *= s;
  reg *= s;
  free_space *= s;
  tether *= s;
  return *this;
}

namespace {

constexpr int kDecoderChunk = 4096;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double loss_recon_per_patch(const ShapeCodes& codes, const DecoderWeights& w,
                            const SdfSampleSet& samples, CodeGrads* grads,
                            DecoderGrads* dtheta) {
  const int n_patches = codes.n_patches();
  const int n_samples = static_cast<int>(samples.points.size());
  double value = 0.0;
  DecoderGrads scratch;
  for (int p = 0; p < n_patches; ++p) {
    const auto& e = codes.extrinsics[static_cast<std::size_t>(p)];
    if (!(e.r >= kRadiusMin)) continue;  // degenerate patch covers nothing
    std::vector<int> members;
    for (int k = 0; k < n_samples; ++k) {
      if ((samples.points[static_cast<std::size_t>(k)] - e.c).norm() <= e.r) {
        members.push_back(k);
      }
    }
    const int m = static_cast<int>(members.size());
    if (m == 0) continue;

    const VectorXd& z = codes.latents[static_cast<std::size_t>(p)];
    const double scale = 1.0 / (static_cast<double>(m) * n_patches);
    for (int start = 0; start < m; start += kDecoderChunk) {
      const int len = std::min(kDecoderChunk, m - start);
      MatrixXd input(w.input_dim(), len);
      input.topRows(w.n_z).colwise() = z;
      for (int j = 0; j < len; ++j) {
        input.col(j).tail(3) =
            to_local_point(e, samples.points[static_cast<std::size_t>(
                                  members[static_cast<std::size_t>(start + j)])]);
      }
      DecoderBatchCache cache;
      const Eigen::RowVectorXd f =
          decoder_forward_batch(w, input, (grads || dtheta) ? &cache : nullptr);

      Eigen::RowVectorXd upstream(len);
      for (int j = 0; j < len; ++j) {
        const int k = members[static_cast<std::size_t>(start + j)];
        const double err = f(j) - samples.sdf[static_cast<std::size_t>(k)];
        value += std::abs(err) * scale;
        upstream(j) = sign_of(err) * scale;
      }
      if (!grads && !dtheta) continue;
      const MatrixXd dinput = decoder_backward_batch(w, cache, upstream, scratch);
      if (dtheta) *dtheta += scratch;
      if (grads) {
        grads->dz[static_cast<std::size_t>(p)] += dinput.topRows(w.n_z).rowwise().sum();
        for (int j = 0; j < len; ++j) {
          const int k = members[static_cast<std::size_t>(start + j)];
          const Vec3 dx_local = dinput.col(j).tail(3);
          const ToLocalResult tl = to_local(e, samples.points[static_cast<std::size_t>(k)]);
          grads->dc[static_cast<std::size_t>(p)] += tl.dlocal_dc.transpose() * dx_local;
          grads->dr[static_cast<std::size_t>(p)] += tl.dlocal_dr.dot(dx_local);
          grads->dphi[static_cast<std::size_t>(p)] += tl.dlocal_dphi.transpose() * dx_local;
        }
      }
    }
  }
  return value;
}

}  // namespace

double loss_recon(const ShapeCodes& codes, const DecoderWeights& w, const SdfSampleSet& samples,
                  bool mixture, CodeGrads* grads, DecoderGrads* dtheta) {
  require(!samples.points.empty(), Errc::contract_violation, "recon loss over empty sample set");
  if (!mixture) return loss_recon_per_patch(codes, w, samples, grads, dtheta);

  BlendContext ctx(codes, w, samples.points);
  const int n = static_cast<int>(samples.points.size());
  double value = 0.0;
  VectorXd upstream = VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    const double err = ctx.values()[k] - samples.sdf[static_cast<std::size_t>(k)];
    value += std::abs(err) / n;
    upstream[k] = sign_of(err) / n;
  }
  if (grads) ctx.backward(upstream, *grads, dtheta);
  return value;
}

ExtTerms loss_ext(const std::vector<PatchExtrinsics>& ext, const SurfaceSamples& surface,
                  const PointKdTree& surface_tree, const LossWeights& lw, CodeGrads* grads) {
  const int n_patches = static_cast<int>(ext.size());
  require(n_patches > 0, Errc::contract_violation, "extrinsics losses need patches");
  require(!surface.points.empty(), Errc::contract_violation,
          "extrinsics losses need surface samples");
  require(surface_tree.size() == surface.points.size(), Errc::contract_violation,
          "surface tree does not index the surface samples");
  ExtTerms terms;

  if (lw.sur > 0.0 || lw.rot > 0.0) {
    for (int p = 0; p < n_patches; ++p) {
      const auto& e = ext[static_cast<std::size_t>(p)];
      const auto nearest = surface_tree.nearest(e.c);
      if (lw.sur > 0.0) {
        const double d2 = nearest.distance * nearest.distance;
        if (d2 > lw.t) {
          terms.sur += lw.sur * d2 / n_patches;
          if (grads) {
            grads->dc[static_cast<std::size_t>(p)] +=
                (lw.sur * 2.0 / n_patches) *
                (e.c - surface.points[static_cast<std::size_t>(nearest.index)]);
          }
        } else {
          terms.sur += lw.sur * lw.t / n_patches;  // clamped branch, zero gradient
        }
      }
      if (lw.rot > 0.0) {
        const Vec3 n = surface.normals[static_cast<std::size_t>(nearest.index)].normalized();
        const Vec3 zdir = euler_xyz(e.phi).col(2);
        const double miss = 1.0 - zdir.dot(n);
        terms.rot += lw.rot * miss * miss / n_patches;
        if (grads) {
          const auto dR = euler_xyz_derivs(e.phi);
          for (int k = 0; k < 3; ++k) {
            grads->dphi[static_cast<std::size_t>(p)][k] +=
                (lw.rot * 2.0 * miss / n_patches) *
                (-dR[static_cast<std::size_t>(k)].col(2).dot(n));
          }
        }
      }
    }
  }

  if (lw.cov > 0.0) {
    const double inv_sigma2 = 1.0 / (lw.sigma_cov * lw.sigma_cov);
    std::vector<double> gap(static_cast<std::size_t>(n_patches));
    std::vector<double> weight(static_cast<std::size_t>(n_patches));
    std::vector<Vec3> dir(static_cast<std::size_t>(n_patches));
    double cov_sum = 0.0;
    int uncovered = 0;
    std::vector<double> dgap_dc_accum;  // flattened per-patch [dc(3), dr]
    if (grads) dgap_dc_accum.assign(static_cast<std::size_t>(n_patches) * 4, 0.0);

    for (const Vec3& x : surface.points) {
      bool covered = false;
      for (int p = 0; p < n_patches && !covered; ++p) {
        const auto& e = ext[static_cast<std::size_t>(p)];
        covered = (x - e.c).norm() < e.r;
      }
      if (covered) continue;
      ++uncovered;

      double wsum = 0.0;
      for (int p = 0; p < n_patches; ++p) {
        const auto& e = ext[static_cast<std::size_t>(p)];
        const double d = (x - e.c).norm();
        gap[static_cast<std::size_t>(p)] = d - e.r;
        weight[static_cast<std::size_t>(p)] =
            std::exp(-0.5 * gap[static_cast<std::size_t>(p)] *
                     gap[static_cast<std::size_t>(p)] * inv_sigma2);
        wsum += weight[static_cast<std::size_t>(p)];
        dir[static_cast<std::size_t>(p)] = d > 0.0 ? Vec3((e.c - x) / d) : Vec3::Zero();
      }
      double point_loss = 0.0;
      for (int p = 0; p < n_patches; ++p) {
        point_loss += weight[static_cast<std::size_t>(p)] / wsum * gap[static_cast<std::size_t>(p)];
      }
      cov_sum += point_loss;
      if (grads) {
        for (int p = 0; p < n_patches; ++p) {
          const double what = weight[static_cast<std::size_t>(p)] / wsum;
          const double g_p = gap[static_cast<std::size_t>(p)];
          const double dgap = what - what * g_p * (g_p - point_loss) * inv_sigma2;
          dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 0] += dgap * dir[static_cast<std::size_t>(p)].x();
          dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 1] += dgap * dir[static_cast<std::size_t>(p)].y();
          dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 2] += dgap * dir[static_cast<std::size_t>(p)].z();
          dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 3] += -dgap;
        }
      }
    }
    if (uncovered > 0) {
      terms.cov = lw.cov * cov_sum / uncovered;
      if (grads) {
        const double scale = lw.cov / uncovered;
        for (int p = 0; p < n_patches; ++p) {
          grads->dc[static_cast<std::size_t>(p)] +=
              scale * Vec3(dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 0],
                           dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 1],
                           dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 2]);
          grads->dr[static_cast<std::size_t>(p)] +=
              scale * dgap_dc_accum[static_cast<std::size_t>(p) * 4 + 3];
        }
      }
    }
  }

  if (lw.scl > 0.0) {
    for (int p = 0; p < n_patches; ++p) {
      const double r = ext[static_cast<std::size_t>(p)].r;
      terms.scl += lw.scl * r * r / n_patches;
      if (grads) grads->dr[static_cast<std::size_t>(p)] += lw.scl * 2.0 * r / n_patches;
    }
  }

  if (lw.var > 0.0) {
    double mean_r = 0.0;
    for (const auto& e : ext) mean_r += e.r / n_patches;
    for (int p = 0; p < n_patches; ++p) {
      const double dev = ext[static_cast<std::size_t>(p)].r - mean_r;
      terms.var += lw.var * dev * dev / n_patches;
      if (grads) grads->dr[static_cast<std::size_t>(p)] += lw.var * 2.0 * dev / n_patches;
    }
  }

  return terms;
}

double loss_reg(const std::vector<VectorXd>& latents, double omega_reg, CodeGrads* grads) {
  const int n = static_cast<int>(latents.size());
  require(n > 0, Errc::contract_violation, "latent regularizer needs latents");
  double value = 0.0;
  for (int p = 0; p < n; ++p) {
    value += omega_reg * latents[static_cast<std::size_t>(p)].squaredNorm() / n;
    if (grads) {
      grads->dz[static_cast<std::size_t>(p)] +=
          (2.0 * omega_reg / n) * latents[static_cast<std::size_t>(p)];
    }
  }
  return value;
}

double loss_free_space(const ShapeCodes& codes, const DecoderWeights& w,
                       const std::vector<Vec3>& points, CodeGrads* grads,
                       DecoderGrads* dtheta) {
  if (points.empty()) return 0.0;
  BlendContext ctx(codes, w, points);
  const int n = static_cast<int>(points.size());
  double value = 0.0;
  VectorXd upstream = VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    const double g = ctx.values()[k];
    if (g < 0.0) {
      value += -g / n;
      upstream[k] = -1.0 / n;
    }
  }
  if (grads) ctx.backward(upstream, *grads, dtheta);
  return value;
}

LossReport loss_total(const ShapeCodes& codes, const DecoderWeights& w,
                      const SdfSampleSet& samples, const SurfaceSamples& surface,
                      const PointKdTree& surface_tree, const LossWeights& lw, bool mixture_recon,
                      const std::vector<Vec3>* free_space_points, CodeGrads* code_grads,
                      DecoderGrads* theta_grads) {
  lw.validate();
  LossReport report;
  report.recon = loss_recon(codes, w, samples, mixture_recon, code_grads, theta_grads);
  if (lw.sur > 0.0 || lw.cov > 0.0 || lw.rot > 0.0 || lw.scl > 0.0 || lw.var > 0.0) {
    const ExtTerms ext = loss_ext(codes.extrinsics, surface, surface_tree, lw, code_grads);
    report.sur = ext.sur;
    report.cov = ext.cov;
    report.rot = ext.rot;
    report.scl = ext.scl;
    report.var = ext.var;
  }
  report.reg = loss_reg(codes.latents, lw.reg, code_grads);
  if (free_space_points && !free_space_points->empty()) {
    report.free_space = loss_free_space(codes, w, *free_space_points, code_grads, theta_grads);
  }
  report.total = report.recon + report.sur + report.cov + report.rot + report.scl + report.var +
                 report.reg + report.free_space;

  const auto check = [](double v, const char* name) {
    require(std::isfinite(v), Errc::numeric_error,
            std::string("non-finite loss term: ") + name);
  };
  check(report.recon, "recon");
  check(report.sur, "sur");
  check(report.cov, "cov");
  check(report.rot, "rot");
  check(report.scl, "scl");
  check(report.var, "var");
  check(report.reg, "reg");
  check(report.free_space, "free_space");
  return report;
}

}  // namespace psdf
