#pragma once

#include "psdf/kdtree.hpp"
#include "psdf/patchrep.hpp"
#include "psdf/sampling.hpp"

namespace psdf {

struct LossWeights {
  double sur = 5.0;
  double cov = 200.0;
  double rot = 1.0;
  double scl = 0.01;
  double var = 0.01;
  double reg = 1e-4;
  double t = 0.06;         // clamp threshold for the squared center-to-surface distance
  double sigma_cov = 0.05;  // coverage kernel width

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double recon = 0.0;
  double sur = 0.0;
  double cov = 0.0;
  double rot = 0.0;
  double scl = 0.0;
  double var = 0.0;
  double reg = 0.0;
  double free_space = 0.0;
  double tether = 0.0;  // extrinsics anchoring used by the object-regressor stage

  LossReport& operator+=(const LossReport& other);
  LossReport& operator*=(double s);
};

using CodeGrads = BlendGrads;

// Reconstruction loss. Default: mean over patches of the mean L1 error of the
// patch decoder over the samples inside each patch sphere (empty patches
// contribute 0). Mixture: L1 of the blended prediction over all samples.
double loss_recon(const ShapeCodes& codes, const DecoderWeights& w, const SdfSampleSet& samples,
                  bool mixture, CodeGrads* grads = nullptr, DecoderGrads* dtheta = nullptr);

struct ExtTerms {
  double sur = 0.0, cov = 0.0, rot = 0.0, scl = 0.0, var = 0.0;
  double total() const { return sur + cov + rot + scl + var; }
};

// Extrinsics losses. `surface_tree` must index `surface.points`; callers cache
// it per object since the surface set is fixed during training.
ExtTerms loss_ext(const std::vector<PatchExtrinsics>& ext, const SurfaceSamples& surface,
                  const PointKdTree& surface_tree, const LossWeights& lw,
                  CodeGrads* grads = nullptr);

double loss_reg(const std::vector<VectorXd>& latents, double omega_reg,
                CodeGrads* grads = nullptr);

double loss_free_space(const ShapeCodes& codes, const DecoderWeights& w,
                       const std::vector<Vec3>& points, CodeGrads* grads = nullptr,
                       DecoderGrads* dtheta = nullptr);

// Full objective: recon + ext + reg (+ free-space when points are supplied).
LossReport loss_total(const ShapeCodes& codes, const DecoderWeights& w,
                      const SdfSampleSet& samples, const SurfaceSamples& surface,
                      const PointKdTree& surface_tree, const LossWeights& lw, bool mixture_recon,
                      const std::vector<Vec3>* free_space_points = nullptr,
                      CodeGrads* code_grads = nullptr, DecoderGrads* theta_grads = nullptr);

}  // namespace psdf
