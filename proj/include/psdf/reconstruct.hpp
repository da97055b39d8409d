#pragma once

#include <filesystem>
#include <functional>

#include "psdf/mesh.hpp"
#include "psdf/patchrep.hpp"
#include "psdf/sampling.hpp"
#include "psdf/training.hpp"

namespace psdf {

// Batched scalar field; returns one value per input point.
using FieldFn = std::function<VectorXd(const std::vector<Vec3>&)>;

// Isosurface of the zero level set on a res^3 grid over [lo, hi]; res counts
// grid points per axis. Points with field < 0 are inside; triangles are
// oriented outward. No sign change anywhere yields an empty mesh.
TriMesh marching_cubes(const FieldFn& field, int res, const Vec3& lo = Vec3(-1, -1, -1),
                       const Vec3& hi = Vec3(1, 1, 1));
TriMesh marching_cubes_scalar(const std::function<double(const Vec3&)>& field, int res,
                              const Vec3& lo = Vec3(-1, -1, -1), const Vec3& hi = Vec3(1, 1, 1));

TriMesh reconstruct_mesh(const ShapeCodes& codes, const DecoderWeights& w, int res = 128,
                         const Vec3& lo = Vec3(-1, -1, -1), const Vec3& hi = Vec3(1, 1, 1));

// Per-patch rigid edit applied to the extrinsics while latents stay fixed.
struct PatchEdit {
  Vec3 rotation = Vec3::Zero();  // Euler XYZ, radians
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
};
using DeformSpec = std::vector<PatchEdit>;

DeformSpec deform_spec_from_json_text(const std::string& text);
DeformSpec load_deform_spec(const std::filesystem::path& path);
ShapeCodes deform_codes(const ShapeCodes& codes, const DeformSpec& spec);

// Decode the linear blend (1-t) a + t b through the object regressor.
ShapeCodes interpolate_codes(const ObjectNetWeights& objectnet, const VectorXd& a,
                             const VectorXd& b, double t);

struct GaussianPrior {
  VectorXd mean;
  MatrixXd covariance;

  void validate() const;
};

// Sample mean and covariance (denominator N-1) with 1e-6 jitter on the diagonal.
GaussianPrior fit_prior(const std::vector<VectorXd>& latents);
VectorXd sample_prior(const GaussianPrior& prior, std::uint64_t seed);
void save_prior(const GaussianPrior& prior, const std::filesystem::path& path);
GaussianPrior load_prior(const std::filesystem::path& path);

struct CompletionConfig {
  int iterations = 600;
  int refine_iterations = 100;  // tail iterations that refine patch latents directly
  double lr = 0.01;
  int lr_halving_period = 200;
  double refine_lr = 1e-3;
  int samples_per_iteration = 8000;
  double free_space_fraction = 0.30;
  double perturb_sigma = 0.005;
  double truncation = 0.1;
  double omega_reg = 1e-4;
  double omega_cov = 200.0;
  double sigma_cov = 0.05;
  double omega_free = 1.0;
  int resolution = 128;
  std::uint64_t seed = 0;
  bool mixture_recon = false;

  void validate() const;
};

CompletionConfig completion_config_from_json_text(const std::string& text);
CompletionConfig load_completion_config(const std::filesystem::path& path);

struct CompletionResult {
  VectorXd object_latent;
  ShapeCodes stage1_codes;   // decoded from the optimized object latent
  ShapeCodes refined_codes;  // after direct patch-latent refinement
  TriMesh mesh;
};

CompletionResult complete_partial(const ObjectNetWeights& objectnet, const DecoderWeights& decoder,
                                  const SurfaceSamples& partial, const Vec3& camera_origin,
                                  const std::vector<VectorXd>& train_latents,
                                  const CompletionConfig& cfg);

}  // namespace psdf
