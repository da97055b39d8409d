#include "psdf/sampling.hpp"

#include <algorithm>

#include "psdf/binio.hpp"

namespace psdf {

void SdfSampleSet::validate() const {
  require(truncation > 0.0, Errc::contract_violation, "truncation must be positive");
  require(sdf.size() == points.size(), Errc::contract_violation,
          "sdf/point count mismatch");
  require(free_space.empty() || free_space.size() == points.size(), Errc::contract_violation,
          "free-space flag count mismatch");
  for (std::size_t k = 0; k < sdf.size(); ++k) {
    require(std::isfinite(sdf[k]) && std::abs(sdf[k]) <= truncation + 1e-12,
            Errc::contract_violation, "sdf value outside truncation band");
    require(points[k].allFinite(), Errc::contract_violation, "non-finite sample point");
  }
}

void CameraView::validate() const {
  require((origin - look_at).norm() > 0.0, Errc::contract_violation,
          "camera origin equals look-at point");
  require(width >= 1 && height >= 1, Errc::contract_violation, "camera resolution must be >= 1x1");
  require(fov_y > 0.0 && fov_y < M_PI, Errc::contract_violation,
          "vertical field of view must lie in (0, pi)");
}

MeshSdf::MeshSdf(const TriMesh& mesh)
    : bvh_(std::make_shared<TriangleBvh>(mesh)), watertight_(!has_open_edges(mesh)) {}

double MeshSdf::operator()(const Vec3& x) const {
  const double d = bvh_->closest_point(x).distance;
  return bvh_->contains(x) ? -d : d;
}

double signed_distance(const TriMesh& mesh, const Vec3& x) { return MeshSdf(mesh)(x); }

SurfaceSamples sample_surface(const TriMesh& mesh, int count, std::uint64_t seed) {
  require(count >= 1, Errc::bad_argument, "sample count must be >= 1");
  const int n_tri = static_cast<int>(mesh.triangles.size());
  require(n_tri > 0, Errc::contract_violation, "cannot sample an empty mesh");
  std::vector<double> cumulative(static_cast<std::size_t>(n_tri));
  double total = 0.0;
  for (int t = 0; t < n_tri; ++t) {
    total += mesh.triangle_area(t);
    cumulative[static_cast<std::size_t>(t)] = total;
  }
  require(total > 0.0, Errc::contract_violation, "mesh has zero surface area");

  Rng rng(seed);
  SurfaceSamples out;
  out.points.reserve(static_cast<std::size_t>(count));
  out.normals.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double pick = rng.uniform() * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), pick);
    const int t = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(), n_tri - 1));
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const double r1 = rng.uniform(), r2 = rng.uniform();
    const double u = 1.0 - std::sqrt(r1);
    const double v = r2 * std::sqrt(r1);
    const Vec3 p = u * mesh.vertices[static_cast<std::size_t>(tri[0])] +
                   v * mesh.vertices[static_cast<std::size_t>(tri[1])] +
                   (1.0 - u - v) * mesh.vertices[static_cast<std::size_t>(tri[2])];
    out.points.push_back(p);
    out.normals.push_back(mesh.triangle_normal(t));
  }
  return out;
}

SdfSampleSet sample_sdf_set(const TriMesh& mesh, int count, double truncation,
                            std::uint64_t seed) {
  require(count >= 1, Errc::bad_argument, "sample count must be >= 1");
  require(truncation > 0.0, Errc::bad_argument, "truncation must be positive");

  const int n_uniform = count / 20;  // 5% of the budget
  const int n_near = count - n_uniform;
  const int n_surf = (n_near + 1) / 2;  // each surface point spawns two perturbed samples

  Rng rng(seed);
  SurfaceSamples surf = sample_surface(mesh, std::max(n_surf, 1), rng.next_u64());
  MeshSdf sdf(mesh);

  SdfSampleSet out;
  out.truncation = truncation;
  out.points.reserve(static_cast<std::size_t>(count));
  Rng perturb = rng.fork(2);
  constexpr double kSigmaCoarse = 0.005;
  constexpr double kSigmaFine = 0.0005;
  for (int k = 0; k < n_surf && static_cast<int>(out.points.size()) < n_near; ++k) {
    const Vec3& p = surf.points[static_cast<std::size_t>(k)];
    out.points.push_back(p + kSigmaCoarse * perturb.normal3());
    if (static_cast<int>(out.points.size()) < n_near) {
      out.points.push_back(p + kSigmaFine * perturb.normal3());
    }
  }
  Rng volume = rng.fork(3);
  for (int k = 0; k < n_uniform; ++k) {
    Vec3 p;
    do {
      p = Vec3(volume.uniform(-1.0, 1.0), volume.uniform(-1.0, 1.0), volume.uniform(-1.0, 1.0));
    } while (p.squaredNorm() > 1.0);
    out.points.push_back(p);
  }

  out.sdf.resize(out.points.size());
  parallel_for(static_cast<std::int64_t>(out.points.size()), [&](std::int64_t k) {
    out.sdf[static_cast<std::size_t>(k)] =
        std::clamp(sdf(out.points[static_cast<std::size_t>(k)]), -truncation, truncation);
  });
  return out;
}

SdfSampleSet add_sdf_noise(const SdfSampleSet& samples, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, Errc::bad_argument, "noise sigma must be >= 0");
  SdfSampleSet out = samples;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (double& s : out.sdf) {
    s = std::clamp(s + sigma * rng.normal(), -out.truncation, out.truncation);
  }
  return out;
}

PartialObservation render_partial(const TriMesh& mesh, const CameraView& cam,
                                  std::uint64_t seed) {
  (void)seed;  // rays are deterministic through pixel centers
  cam.validate();
  const Vec3 forward = (cam.look_at - cam.origin).normalized();
  Vec3 up_hint(0, 0, 1);
  if (std::abs(forward.dot(up_hint)) > 0.999) up_hint = Vec3(0, 1, 0);
  const Vec3 right = forward.cross(up_hint).normalized();
  const Vec3 up = right.cross(forward);

  const double tan_half = std::tan(0.5 * cam.fov_y);
  const double aspect = static_cast<double>(cam.width) / cam.height;
  TriangleBvh bvh(mesh);

  PartialObservation obs;
  obs.camera_origin = cam.origin;
  for (int j = 0; j < cam.height; ++j) {
    for (int i = 0; i < cam.width; ++i) {
      const double px = (2.0 * (i + 0.5) / cam.width - 1.0) * tan_half * aspect;
      const double py = (1.0 - 2.0 * (j + 0.5) / cam.height) * tan_half;
      const Vec3 dir = (forward + px * right + py * up).normalized();
      if (auto hit = bvh.raycast(cam.origin, dir)) {
        obs.samples.points.push_back(hit->point);
        obs.samples.normals.push_back(hit->normal);
      }
    }
  }
  require(!obs.samples.points.empty(), Errc::empty_observation,
          "camera sees no part of the mesh");
  return obs;
}

void save_sdf_samples(const SdfSampleSet& samples, const std::filesystem::path& path) {
  samples.validate();
  auto out = binio::open_write(path);
  binio::write_magic(out, "PNSD");
  binio::write_pod<std::uint32_t>(out, 1);
  binio::write_pod<float>(out, static_cast<float>(samples.truncation));
  binio::write_pod<std::uint64_t>(out, samples.points.size());
  binio::write_pod<std::uint64_t>(out, samples.has_flags() ? 1 : 0);
  for (std::size_t k = 0; k < samples.points.size(); ++k) {
    for (int d = 0; d < 3; ++d) {
      binio::write_pod<float>(out, static_cast<float>(samples.points[k][d]));
    }
    binio::write_pod<float>(out, static_cast<float>(samples.sdf[k]));
    if (samples.has_flags()) binio::write_pod<std::uint8_t>(out, samples.free_space[k]);
  }
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

SdfSampleSet load_sdf_samples(const std::filesystem::path& path) {
  auto in = binio::open_read(path);
  binio::expect_magic(in, "PNSD", path.string());
  const auto version = binio::read_pod<std::uint32_t>(in, "version");
  require(version == 1, Errc::parse_error, path.string() + ": unsupported PNSD version");
  SdfSampleSet samples;
  samples.truncation = binio::read_pod<float>(in, "truncation");
  const auto count = binio::read_pod<std::uint64_t>(in, "count");
  const auto has_flags = binio::read_pod<std::uint64_t>(in, "flags-present");
  samples.points.resize(count);
  samples.sdf.resize(count);
  if (has_flags) samples.free_space.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    for (int d = 0; d < 3; ++d) samples.points[k][d] = binio::read_pod<float>(in, "point");
    // float storage can overshoot the truncation band by one ulp; clamp back
    samples.sdf[k] = std::clamp(static_cast<double>(binio::read_pod<float>(in, "sdf")),
                                -samples.truncation, samples.truncation);
    if (has_flags) samples.free_space[k] = binio::read_pod<std::uint8_t>(in, "flag");
  }
  samples.validate();
  return samples;
}

void save_surface_samples(const SurfaceSamples& samples, const std::filesystem::path& path) {
  require(samples.normals.size() == samples.points.size(), Errc::contract_violation,
          "surface samples missing normals");
  auto out = binio::open_write(path);
  binio::write_magic(out, "PNSS");
  binio::write_pod<std::uint32_t>(out, 1);
  binio::write_pod<std::uint64_t>(out, samples.points.size());
  for (std::size_t k = 0; k < samples.points.size(); ++k) {
    for (int d = 0; d < 3; ++d) {
      binio::write_pod<float>(out, static_cast<float>(samples.points[k][d]));
    }
    for (int d = 0; d < 3; ++d) {
      binio::write_pod<float>(out, static_cast<float>(samples.normals[k][d]));
    }
  }
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

SurfaceSamples load_surface_samples(const std::filesystem::path& path) {
  auto in = binio::open_read(path);
  binio::expect_magic(in, "PNSS", path.string());
  const auto version = binio::read_pod<std::uint32_t>(in, "version");
  require(version == 1, Errc::parse_error, path.string() + ": unsupported PNSS version");
  const auto count = binio::read_pod<std::uint64_t>(in, "count");
  SurfaceSamples samples;
  samples.points.resize(count);
  samples.normals.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    for (int d = 0; d < 3; ++d) samples.points[k][d] = binio::read_pod<float>(in, "point");
    for (int d = 0; d < 3; ++d) samples.normals[k][d] = binio::read_pod<float>(in, "normal");
    const double len = samples.normals[k].norm();
    if (len > 0.0) samples.normals[k] /= len;
  }
  return samples;
}

}  // namespace psdf
