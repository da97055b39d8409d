#pragma once

#include <vector>

#include "psdf/common.hpp"
#include "psdf/networks.hpp"
#include "psdf/sampling.hpp"

namespace psdf {

constexpr double kRadiusMin = 1e-4;

// Euler angles, intrinsic XYZ: R(phi) = Rx(phi0) * Ry(phi1) * Rz(phi2),
// mapping patch-frame vectors to world.
Mat3 euler_xyz(const Vec3& phi);
std::array<Mat3, 3> euler_xyz_derivs(const Vec3& phi);
Vec3 euler_from_matrix(const Mat3& R);
// phi such that R(phi) * (0,0,1) = n for unit n.
Vec3 euler_aligning_z(const Vec3& n);

struct PatchExtrinsics {
  Vec3 c = Vec3::Zero();
  double r = 1.0;
  Vec3 phi = Vec3::Zero();

  void validate() const;
};

struct ShapeCodes {
  std::vector<VectorXd> latents;
  std::vector<PatchExtrinsics> extrinsics;

  int n_patches() const { return static_cast<int>(latents.size()); }
  void validate(int n_z) const;
};

std::vector<PatchExtrinsics> init_extrinsics(const SurfaceSamples& surface, int n_patches,
                                             std::uint64_t seed);

struct ToLocalResult {
  Vec3 x_local = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  Mat3 dlocal_dx = Mat3::Identity();   // = R^T / r
  Mat3 dlocal_dc = -Mat3::Identity();  // = -R^T / r
  Vec3 dlocal_dr = Vec3::Zero();       // = -x_local / r
  Mat3 dlocal_dphi = Mat3::Zero();     // column k = d x_local / d phi_k
};

Vec3 to_local_point(const PatchExtrinsics& e, const Vec3& x);
ToLocalResult to_local(const PatchExtrinsics& e, const Vec3& x);

std::vector<int> patch_membership(const ShapeCodes& codes, const Vec3& x);

// Unnormalized blend weight exp(-(d/sigma)^2/2) minus its value at the patch
// boundary, sigma = r/3; zero at d = r, maximal at the center.
double blend_weight(double dist, double radius);
// d blend_weight / d dist and / d radius.
void blend_weight_grad(double dist, double radius, double& dw_ddist, double& dw_dradius);

struct BlendGrads {
  std::vector<VectorXd> dz;
  std::vector<Vec3> dc;
  std::vector<double> dr;
  std::vector<Vec3> dphi;

  static BlendGrads zeros_like(const ShapeCodes& codes);
  BlendGrads& operator+=(const BlendGrads& other);
  BlendGrads& operator*=(double s);
};

// Batched blended-SDF evaluation with an optional exact backward pass.
// Construction runs the decoder once per covered (patch, point) pair; the
// backward pass re-runs it in bounded chunks to keep memory flat.
class BlendContext {
 public:
  BlendContext(const ShapeCodes& codes, const DecoderWeights& w,
               const std::vector<Vec3>& points);

  const VectorXd& values() const { return g_; }
  // True when at least one patch covers the point with nonvanishing weight.
  bool covered(int point) const { return weight_sum_[static_cast<std::size_t>(point)] > 0.0; }

  // Accumulates gradients of sum_k upstream[k] * g(x_k) into `grads` and
  // optionally `dtheta`.
  void backward(const VectorXd& upstream, BlendGrads& grads,
                DecoderGrads* dtheta = nullptr) const;

 private:
  struct PatchBatch {
    std::vector<int> point_index;
    MatrixXd x_local;       // 3 x n
    Eigen::RowVectorXd f;   // decoder outputs
    std::vector<double> w;  // unnormalized blend weights
  };

  const ShapeCodes& codes_;
  const DecoderWeights& w_;
  const std::vector<Vec3>& points_;
  std::vector<PatchBatch> batches_;
  VectorXd g_;
  VectorXd weight_sum_;
};

double blend_sdf(const ShapeCodes& codes, const DecoderWeights& w, const Vec3& x);

// Values only, chunked; suitable for dense grids.
VectorXd blend_sdf_batch(const ShapeCodes& codes, const DecoderWeights& w,
                         const std::vector<Vec3>& points);

}  // namespace psdf
