#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "psdf/bvh.hpp"
#include "psdf/common.hpp"
#include "psdf/mesh.hpp"

namespace psdf {

struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;

  std::size_t size() const { return points.size(); }
};

struct SdfSampleSet {
  std::vector<Vec3> points;
  std::vector<double> sdf;
  std::vector<std::uint8_t> free_space;  // empty when flags absent
  double truncation = 0.1;

  std::size_t size() const { return points.size(); }
  bool has_flags() const { return !free_space.empty(); }
  void validate() const;
};

struct CameraView {
  Vec3 origin = Vec3(0, 0, 2);
  Vec3 look_at = Vec3::Zero();
  int width = 64;
  int height = 64;
  double fov_y = 1.0;  // radians

  void validate() const;
};

// Signed distance to a mesh: exact unsigned distance via BVH, sign via
// generalized winding number (> 0.5 means inside).
class MeshSdf {
 public:
  explicit MeshSdf(const TriMesh& mesh);

  double operator()(const Vec3& x) const;
  bool watertight() const { return watertight_; }
  const TriangleBvh& bvh() const { return *bvh_; }

 private:
  std::shared_ptr<const TriangleBvh> bvh_;
  bool watertight_ = true;
};

double signed_distance(const TriMesh& mesh, const Vec3& x);

SurfaceSamples sample_surface(const TriMesh& mesh, int count, std::uint64_t seed);

SdfSampleSet sample_sdf_set(const TriMesh& mesh, int count, double truncation,
                            std::uint64_t seed);

SdfSampleSet add_sdf_noise(const SdfSampleSet& samples, double sigma, std::uint64_t seed);

struct PartialObservation {
  SurfaceSamples samples;
  Vec3 camera_origin = Vec3::Zero();
};

PartialObservation render_partial(const TriMesh& mesh, const CameraView& cam,
                                  std::uint64_t seed);

void save_sdf_samples(const SdfSampleSet& samples, const std::filesystem::path& path);
SdfSampleSet load_sdf_samples(const std::filesystem::path& path);

void save_surface_samples(const SurfaceSamples& samples, const std::filesystem::path& path);
SurfaceSamples load_surface_samples(const std::filesystem::path& path);

}  // namespace psdf
