#include "psdf/reconstruct.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "psdf/binio.hpp"
#include "psdf/checkpoint.hpp"
#include "psdf/kdtree.hpp"
#include "psdf/losses.hpp"

namespace psdf {

namespace {

// Corner c of a cell has offsets (c & 1, c >> 1 & 1, c >> 2 & 1). An edge is
// identified by its lower corner (bit `axis` clear) and its axis.
struct McTables {
  std::array<std::array<int, 2>, 12> edge_ends{};   // edge id -> (lo corner, hi corner)
  std::array<int, 12> edge_axis{};
  std::array<std::array<int, 24>, 256> tri{};       // flattened edge-id triples, -1 terminated
};

McTables build_mc_tables() {
  McTables t;
  std::array<std::array<int, 3>, 8> edge_of{};
  int n_edges = 0;
  for (int axis = 0; axis < 3; ++axis) {
    for (int c = 0; c < 8; ++c) {
      if (c & (1 << axis)) continue;
      t.edge_ends[static_cast<std::size_t>(n_edges)] = {c, c | (1 << axis)};
      t.edge_axis[static_cast<std::size_t>(n_edges)] = axis;
      edge_of[static_cast<std::size_t>(c)][static_cast<std::size_t>(axis)] = n_edges;
      ++n_edges;
    }
  }

  auto edge_between = [&](int a, int b) {
    const int diff = a ^ b;
    const int axis = diff == 1 ? 0 : diff == 2 ? 1 : 2;
    return edge_of[static_cast<std::size_t>(std::min(a, b))][static_cast<std::size_t>(axis)];
  };

  // Corner cycles of the six faces, counterclockwise seen from outside the cell.
  std::array<std::array<int, 4>, 6> faces{};
  int n_faces = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const int u1 = (axis + 1) % 3;
    const int u2 = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      auto corner = [&](int b1, int b2) { return (b1 << u1) | (b2 << u2) | (side << axis); };
      if (side == 1) {
        faces[static_cast<std::size_t>(n_faces)] = {corner(0, 0), corner(1, 0), corner(1, 1),
                                                    corner(0, 1)};
      } else {
        faces[static_cast<std::size_t>(n_faces)] = {corner(0, 0), corner(0, 1), corner(1, 1),
                                                    corner(1, 0)};
      }
      ++n_faces;
    }
  }

  for (int mask = 0; mask < 256; ++mask) {
    auto inside = [&](int c) { return (mask >> c) & 1; };
    std::array<int, 12> next{};
    std::array<bool, 12> has_next{};
    std::array<bool, 12> is_target{};
    next.fill(-1);
    has_next.fill(false);
    is_target.fill(false);

    // Each maximal run of inside corners along a face cycle contributes one
    // chord from its entry cut edge to its exit cut edge; following chords
    // around the cell closes the surface loops with outward orientation.
    for (const auto& face : faces) {
      for (int i = 0; i < 4; ++i) {
        if (!inside(face[static_cast<std::size_t>(i)])) continue;
        const int prev = face[static_cast<std::size_t>((i + 3) % 4)];
        if (inside(prev)) continue;
        int e = i;
        while (inside(face[static_cast<std::size_t>((e + 1) % 4)])) e = (e + 1) % 4;
        const int entry = edge_between(prev, face[static_cast<std::size_t>(i)]);
        const int exit = edge_between(face[static_cast<std::size_t>(e)],
                                      face[static_cast<std::size_t>((e + 1) % 4)]);
        require(!has_next[static_cast<std::size_t>(entry)], Errc::contract_violation,
                "marching-cubes table: duplicate chord start");
        require(!is_target[static_cast<std::size_t>(exit)], Errc::contract_violation,
                "marching-cubes table: duplicate chord end");
        next[static_cast<std::size_t>(entry)] = exit;
        has_next[static_cast<std::size_t>(entry)] = true;
        is_target[static_cast<std::size_t>(exit)] = true;
      }
    }

    for (int e = 0; e < 12; ++e) {
      const bool cut =
          inside(t.edge_ends[static_cast<std::size_t>(e)][0]) !=
          inside(t.edge_ends[static_cast<std::size_t>(e)][1]);
      require(cut == has_next[static_cast<std::size_t>(e)] &&
                  cut == is_target[static_cast<std::size_t>(e)],
              Errc::contract_violation, "marching-cubes table: chord degree mismatch");
    }

    auto& out = t.tri[static_cast<std::size_t>(mask)];
    out.fill(-1);
    int n_out = 0;
    std::array<bool, 12> used{};
    used.fill(false);
    for (int start = 0; start < 12; ++start) {
      if (!has_next[static_cast<std::size_t>(start)] || used[static_cast<std::size_t>(start)])
        continue;
      std::array<int, 12> loop{};
      int len = 0;
      int e = start;
      do {
        used[static_cast<std::size_t>(e)] = true;
        loop[static_cast<std::size_t>(len++)] = e;
        e = next[static_cast<std::size_t>(e)];
      } while (e != start);
      require(len >= 3, Errc::contract_violation, "marching-cubes table: degenerate loop");
      for (int i = 1; i + 1 < len; ++i) {
        out[static_cast<std::size_t>(n_out++)] = loop[0];
        out[static_cast<std::size_t>(n_out++)] = loop[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(n_out++)] = loop[static_cast<std::size_t>(i + 1)];
      }
    }
  }
  return t;
}

const McTables& mc_tables() {
  static const McTables tables = build_mc_tables();
  return tables;
}

}  // namespace

TriMesh marching_cubes(const FieldFn& field, int res, const Vec3& lo, const Vec3& hi) {
  require(res >= 2, Errc::bad_argument, "marching cubes needs at least 2 grid points per axis");
  require((hi - lo).minCoeff() > 0.0, Errc::bad_argument, "degenerate marching-cubes bounds");
  const McTables& tables = mc_tables();

  const Vec3 step = (hi - lo) / static_cast<double>(res - 1);
  const auto slab_size = static_cast<std::size_t>(res) * static_cast<std::size_t>(res);

  auto eval_slab = [&](int k) {
    std::vector<Vec3> pts(slab_size);
    for (int j = 0; j < res; ++j) {
      for (int i = 0; i < res; ++i) {
        pts[static_cast<std::size_t>(j) * static_cast<std::size_t>(res) +
            static_cast<std::size_t>(i)] =
            lo + Vec3(i * step.x(), j * step.y(), k * step.z());
      }
    }
    VectorXd vals = field(pts);
    require(vals.size() == static_cast<Eigen::Index>(slab_size), Errc::contract_violation,
            "field returned wrong number of values");
    require(vals.allFinite(), Errc::numeric_error, "non-finite field value on the grid");
    return vals;
  };

  TriMesh mesh;
  std::unordered_map<std::int64_t, int> edge_vertex;
  VectorXd slab0 = eval_slab(0);
  VectorXd slab1(slab_size);

  auto value_at = [&](const VectorXd& lo_slab, const VectorXd& hi_slab, int i, int j,
                      int dz) -> double {
    const auto idx = static_cast<Eigen::Index>(j) * res + i;
    return dz == 0 ? lo_slab[idx] : hi_slab[idx];
  };

  for (int k = 0; k + 1 < res; ++k) {
    slab1 = eval_slab(k + 1);
    for (int j = 0; j + 1 < res; ++j) {
      for (int i = 0; i + 1 < res; ++i) {
        std::array<double, 8> f{};
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          f[static_cast<std::size_t>(c)] =
              value_at(slab0, slab1, i + (c & 1), j + ((c >> 1) & 1), (c >> 2) & 1);
          if (f[static_cast<std::size_t>(c)] < 0.0) mask |= 1 << c;
        }
        if (mask == 0 || mask == 255) continue;

        const auto& tri = tables.tri[static_cast<std::size_t>(mask)];
        for (int v = 0; v < 24 && tri[static_cast<std::size_t>(v)] >= 0; v += 3) {
          std::array<int, 3> ids{};
          for (int s = 0; s < 3; ++s) {
            const int e = tri[static_cast<std::size_t>(v + s)];
            const int clo = tables.edge_ends[static_cast<std::size_t>(e)][0];
            const int axis = tables.edge_axis[static_cast<std::size_t>(e)];
            const int gi = i + (clo & 1);
            const int gj = j + ((clo >> 1) & 1);
            const int gk = k + ((clo >> 2) & 1);
            const std::int64_t key =
                3 * ((static_cast<std::int64_t>(gk) * res + gj) * res + gi) + axis;
            auto it = edge_vertex.find(key);
            if (it == edge_vertex.end()) {
              const double f0 = f[static_cast<std::size_t>(clo)];
              const double f1 =
                  f[static_cast<std::size_t>(tables.edge_ends[static_cast<std::size_t>(e)][1])];
              const double frac = f0 / (f0 - f1);
              Vec3 p = lo + Vec3(gi * step.x(), gj * step.y(), gk * step.z());
              p[axis] += frac * step[axis];
              it = edge_vertex.emplace(key, static_cast<int>(mesh.vertices.size())).first;
              mesh.vertices.push_back(p);
            }
            ids[static_cast<std::size_t>(s)] = it->second;
          }
          mesh.triangles.push_back(ids);
        }
      }
    }
    std::swap(slab0, slab1);
  }
  return mesh;
}

TriMesh marching_cubes_scalar(const std::function<double(const Vec3&)>& field, int res,
                              const Vec3& lo, const Vec3& hi) {
  return marching_cubes(
      [&](const std::vector<Vec3>& pts) {
        VectorXd vals(static_cast<Eigen::Index>(pts.size()));
        for (std::size_t i = 0; i < pts.size(); ++i) {
          vals[static_cast<Eigen::Index>(i)] = field(pts[i]);
        }
        return vals;
      },
      res, lo, hi);
}

TriMesh reconstruct_mesh(const ShapeCodes& codes, const DecoderWeights& w, int res,
                         const Vec3& lo, const Vec3& hi) {
  return marching_cubes(
      [&](const std::vector<Vec3>& pts) { return blend_sdf_batch(codes, w, pts); }, res, lo, hi);
}

DeformSpec deform_spec_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& ex) {
    fail(Errc::parse_error, std::string("deform spec: ") + ex.what());
  }
  require(j.is_array(), Errc::parse_error, "deform spec must be a JSON array, one entry per patch");
  DeformSpec spec;
  try {
    for (const auto& item : j) {
      require(item.is_object(), Errc::parse_error, "deform spec entries must be objects");
      for (const auto& kv : item.items()) {
        require(kv.key() == "rotation" || kv.key() == "translation" || kv.key() == "scale",
                Errc::parse_error, "unknown deform spec key: " + kv.key());
      }
      PatchEdit edit;
      if (item.contains("rotation")) {
        const auto v = item.at("rotation").get<std::vector<double>>();
        require(v.size() == 3, Errc::parse_error, "rotation must have 3 components");
        edit.rotation = Vec3(v[0], v[1], v[2]);
      }
      if (item.contains("translation")) {
        const auto v = item.at("translation").get<std::vector<double>>();
        require(v.size() == 3, Errc::parse_error, "translation must have 3 components");
        edit.translation = Vec3(v[0], v[1], v[2]);
      }
      if (item.contains("scale")) edit.scale = item.at("scale").get<double>();
      spec.push_back(edit);
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(Errc::parse_error, std::string("deform spec: ") + ex.what());
  }
  return spec;
}

DeformSpec load_deform_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deform_spec_from_json_text(buffer.str());
}

ShapeCodes deform_codes(const ShapeCodes& codes, const DeformSpec& spec) {
  require(static_cast<int>(spec.size()) == codes.n_patches(), Errc::bad_argument,
          "deform spec length != patch count");
  ShapeCodes out = codes;
  for (std::size_t p = 0; p < spec.size(); ++p) {
    const PatchEdit& edit = spec[p];
    require(edit.scale > 0.0, Errc::bad_argument, "deform scale must be positive");
    auto& e = out.extrinsics[p];
    // Zero-rotation edits skip the Euler round trip so identity specs are
    // exact no-ops.
    if (!edit.rotation.isZero(0.0)) {
      const Mat3 rot = euler_xyz(edit.rotation);
      e.c = rot * e.c;
      e.phi = euler_from_matrix(rot * euler_xyz(e.phi));
    }
    e.c += edit.translation;
    e.r *= edit.scale;
  }
  return out;
}

ShapeCodes interpolate_codes(const ObjectNetWeights& objectnet, const VectorXd& a,
                             const VectorXd& b, double t) {
  require(a.size() == objectnet.latent_dim && b.size() == objectnet.latent_dim,
          Errc::bad_argument, "latent size mismatch");
  const VectorXd mix = (1.0 - t) * a + t * b;
  return unpack_codes(objectnet_forward(objectnet, mix), objectnet.n_p, objectnet.n_z);
}

void GaussianPrior::validate() const {
  require(mean.size() > 0, Errc::contract_violation, "empty prior mean");
  require(covariance.rows() == mean.size() && covariance.cols() == mean.size(),
          Errc::contract_violation, "prior covariance shape mismatch");
  require(mean.allFinite() && covariance.allFinite(), Errc::numeric_error, "non-finite prior");
  require((covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          Errc::contract_violation, "prior covariance not symmetric");
}

GaussianPrior fit_prior(const std::vector<VectorXd>& latents) {
  require(latents.size() >= 2, Errc::bad_argument, "fitting a prior needs at least 2 latents");
  const Eigen::Index dim = latents[0].size();
  for (const auto& u : latents) {
    require(u.size() == dim, Errc::bad_argument, "latent size mismatch");
  }
  GaussianPrior prior;
  prior.mean = VectorXd::Zero(dim);
  for (const auto& u : latents) prior.mean += u;
  prior.mean /= static_cast<double>(latents.size());
  prior.covariance = MatrixXd::Zero(dim, dim);
  for (const auto& u : latents) {
    const VectorXd d = u - prior.mean;
    prior.covariance += d * d.transpose();
  }
  prior.covariance /= static_cast<double>(latents.size() - 1);
  prior.covariance += 1e-6 * MatrixXd::Identity(dim, dim);
  prior.validate();
  return prior;
}

VectorXd sample_prior(const GaussianPrior& prior, std::uint64_t seed) {
  prior.validate();
  const Eigen::LLT<MatrixXd> llt(prior.covariance);
  require(llt.info() == Eigen::Success, Errc::numeric_error,
          "prior covariance is not positive definite");
  Rng rng(seed);
  VectorXd xi(prior.mean.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
  return prior.mean + llt.matrixL() * xi;
}

namespace {
constexpr char kPriorMagic[4] = {'P', 'N', 'G', 'P'};
}

void save_prior(const GaussianPrior& prior, const std::filesystem::path& path) {
  prior.validate();
  std::ofstream out = binio::open_write(path);
  binio::write_magic(out, kPriorMagic);
  binio::write_pod(out, std::uint32_t{1});
  binio::write_pod(out, static_cast<std::uint64_t>(prior.mean.size()));
  for (Eigen::Index i = 0; i < prior.mean.size(); ++i) binio::write_pod(out, prior.mean[i]);
  for (Eigen::Index c = 0; c < prior.covariance.cols(); ++c) {
    for (Eigen::Index r = 0; r < prior.covariance.rows(); ++r) {
      binio::write_pod(out, prior.covariance(r, c));
    }
  }
  out.flush();
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

GaussianPrior load_prior(const std::filesystem::path& path) {
  std::ifstream in = binio::open_read(path);
  binio::expect_magic(in, kPriorMagic, "prior");
  const auto version = binio::read_pod<std::uint32_t>(in, "prior version");
  require(version == 1, Errc::parse_error, "unsupported prior version");
  const auto dim64 = binio::read_pod<std::uint64_t>(in, "prior dimension");
  require(dim64 >= 1 && dim64 <= (1u << 20), Errc::parse_error, "implausible prior dimension");
  const auto dim = static_cast<Eigen::Index>(dim64);
  GaussianPrior prior;
  prior.mean.resize(dim);
  for (Eigen::Index i = 0; i < dim; ++i) prior.mean[i] = binio::read_pod<double>(in, "prior mean");
  prior.covariance.resize(dim, dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    for (Eigen::Index r = 0; r < dim; ++r) {
      prior.covariance(r, c) = binio::read_pod<double>(in, "prior covariance");
    }
  }
  prior.validate();
  return prior;
}

void CompletionConfig::validate() const {
  require(iterations >= 1, Errc::bad_argument, "iterations must be positive");
  require(refine_iterations >= 0 && refine_iterations <= iterations, Errc::bad_argument,
          "refine_iterations must lie in [0, iterations]");
  require(lr > 0.0 && refine_lr > 0.0, Errc::bad_argument, "learning rates must be positive");
  require(lr_halving_period >= 1, Errc::bad_argument, "lr_halving_period must be positive");
  require(samples_per_iteration >= 1, Errc::bad_argument, "samples_per_iteration must be positive");
  require(free_space_fraction >= 0.0 && free_space_fraction <= 1.0, Errc::bad_argument,
          "free_space_fraction must lie in [0, 1]");
  require(perturb_sigma >= 0.0, Errc::bad_argument, "perturb_sigma must be nonnegative");
  require(truncation > 0.0, Errc::bad_argument, "truncation must be positive");
  require(omega_reg >= 0.0 && omega_cov >= 0.0 && omega_free >= 0.0, Errc::bad_argument,
          "loss weights must be nonnegative");
  require(sigma_cov > 0.0, Errc::bad_argument, "sigma_cov must be positive");
  require(resolution >= 2, Errc::bad_argument, "resolution must be at least 2");
}

CompletionConfig completion_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& ex) {
    fail(Errc::parse_error, std::string("completion config: ") + ex.what());
  }
  require(j.is_object(), Errc::parse_error, "completion config must be a JSON object");
  static const std::array<const char*, 16> known{
      "iterations",     "refine_iterations", "lr",
      "lr_halving_period", "refine_lr",      "samples_per_iteration",
      "free_space_fraction", "perturb_sigma", "truncation",
      "omega_reg",      "omega_cov",         "sigma_cov",
      "omega_free",     "resolution",        "seed",
      "mixture_recon"};
  for (const auto& item : j.items()) {
    require(std::find(known.begin(), known.end(), item.key()) != known.end(), Errc::parse_error,
            "unknown completion config key: " + item.key());
  }
  CompletionConfig cfg;
  try {
    if (j.contains("iterations")) cfg.iterations = j.at("iterations").get<int>();
    if (j.contains("refine_iterations"))
      cfg.refine_iterations = j.at("refine_iterations").get<int>();
    if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
    if (j.contains("lr_halving_period"))
      cfg.lr_halving_period = j.at("lr_halving_period").get<int>();
    if (j.contains("refine_lr")) cfg.refine_lr = j.at("refine_lr").get<double>();
    if (j.contains("samples_per_iteration"))
      cfg.samples_per_iteration = j.at("samples_per_iteration").get<int>();
    if (j.contains("free_space_fraction"))
      cfg.free_space_fraction = j.at("free_space_fraction").get<double>();
    if (j.contains("perturb_sigma")) cfg.perturb_sigma = j.at("perturb_sigma").get<double>();
    if (j.contains("truncation")) cfg.truncation = j.at("truncation").get<double>();
    if (j.contains("omega_reg")) cfg.omega_reg = j.at("omega_reg").get<double>();
    if (j.contains("omega_cov")) cfg.omega_cov = j.at("omega_cov").get<double>();
    if (j.contains("sigma_cov")) cfg.sigma_cov = j.at("sigma_cov").get<double>();
    if (j.contains("omega_free")) cfg.omega_free = j.at("omega_free").get<double>();
    if (j.contains("resolution")) cfg.resolution = j.at("resolution").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("mixture_recon")) cfg.mixture_recon = j.at("mixture_recon").get<bool>();
  } catch (const nlohmann::json::exception& ex) {
    fail(Errc::parse_error, std::string("completion config: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

CompletionConfig load_completion_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return completion_config_from_json_text(buffer.str());
}

namespace {

struct CompletionDraw {
  SdfSampleSet near_surface;
  std::vector<Vec3> free_space;
};

// Free-space points lie uniformly on camera-to-hit segments with a 0.02 guard
// band before the surface; near-surface points are observed hits (sdf 0) plus
// two Gaussian perturbations each, labeled with the offset along the normal.
CompletionDraw draw_completion_samples(const SurfaceSamples& partial, const Vec3& camera_origin,
                                       const CompletionConfig& cfg, Rng& rng) {
  CompletionDraw draw;
  const int n_free = static_cast<int>(
      std::lround(cfg.free_space_fraction * static_cast<double>(cfg.samples_per_iteration)));
  const int n_near = cfg.samples_per_iteration - n_free;
  const auto n_obs = static_cast<std::uint64_t>(partial.size());

  draw.free_space.reserve(static_cast<std::size_t>(n_free));
  for (int i = 0; i < n_free; ++i) {
    const auto pick = static_cast<std::size_t>(rng.uniform_index(n_obs));
    const Vec3 seg = partial.points[pick] - camera_origin;
    const double len = seg.norm();
    const double usable = std::max(len - 0.02, 0.0);
    draw.free_space.push_back(camera_origin + seg * (usable * rng.uniform() / std::max(len, 1e-12)));
  }

  draw.near_surface.truncation = cfg.truncation;
  auto& near = draw.near_surface;
  near.points.reserve(static_cast<std::size_t>(n_near));
  near.sdf.reserve(static_cast<std::size_t>(n_near));
  while (static_cast<int>(near.points.size()) < n_near) {
    const auto pick = static_cast<std::size_t>(rng.uniform_index(n_obs));
    const Vec3& x = partial.points[pick];
    const Vec3& n = partial.normals[pick];
    near.points.push_back(x);
    near.sdf.push_back(0.0);
    for (int s = 0; s < 2 && static_cast<int>(near.points.size()) < n_near; ++s) {
      const Vec3 eta = cfg.perturb_sigma * rng.normal3();
      near.points.push_back(x + eta);
      near.sdf.push_back(std::clamp(eta.dot(n), -cfg.truncation, cfg.truncation));
    }
  }
  return draw;
}

}  // namespace

CompletionResult complete_partial(const ObjectNetWeights& objectnet, const DecoderWeights& decoder,
                                  const SurfaceSamples& partial, const Vec3& camera_origin,
                                  const std::vector<VectorXd>& train_latents,
                                  const CompletionConfig& cfg) {
  cfg.validate();
  objectnet.validate();
  decoder.validate();
  require(objectnet.n_z == decoder.n_z, Errc::contract_violation,
          "regressor/decoder latent size mismatch");
  require(partial.size() > 0, Errc::empty_observation, "empty partial observation");
  require(partial.normals.size() == partial.points.size(), Errc::contract_violation,
          "partial observation needs normals");
  require(!train_latents.empty(), Errc::bad_argument, "completion needs training latents");

  const int n_p = objectnet.n_p;
  const int n_z = objectnet.n_z;
  const std::uint64_t decoder_digest = decoder_checksum(decoder);
  const std::uint64_t objectnet_digest = objectnet_checksum(objectnet);

  VectorXd u = VectorXd::Zero(objectnet.latent_dim);
  for (const auto& z : train_latents) {
    require(z.size() == objectnet.latent_dim, Errc::bad_argument, "training latent size mismatch");
    u += z;
  }
  u /= static_cast<double>(train_latents.size());

  const PointKdTree partial_tree(partial.points);
  LossWeights cov_only;
  cov_only.sur = cov_only.rot = cov_only.scl = cov_only.var = 0.0;
  cov_only.cov = cfg.omega_cov;
  cov_only.sigma_cov = cfg.sigma_cov;

  Rng rng(cfg.seed);

  const int stage1_iters = cfg.iterations - cfg.refine_iterations;
  Adam opt_latent;
  for (int it = 1; it <= stage1_iters; ++it) {
    const double lr = cfg.lr * std::exp2(-static_cast<double>((it - 1) / cfg.lr_halving_period));
    Rng iter_rng = rng.fork(static_cast<std::uint64_t>(it));
    const CompletionDraw draw = draw_completion_samples(partial, camera_origin, cfg, iter_rng);

    MatrixXd latent_col = u;
    ObjectNetBatchCache cache;
    const MatrixXd out = objectnet_forward_batch(objectnet, latent_col, &cache);
    const ShapeCodes codes = unpack_codes(out.col(0), n_p, n_z);
    CodeGrads cg = CodeGrads::zeros_like(codes);

    loss_recon(codes, decoder, draw.near_surface, cfg.mixture_recon, &cg, nullptr);
    loss_ext(codes.extrinsics, partial, partial_tree, cov_only, &cg);
    if (!draw.free_space.empty() && cfg.omega_free > 0.0) {
      CodeGrads fs_grads = CodeGrads::zeros_like(codes);
      loss_free_space(codes, decoder, draw.free_space, &fs_grads, nullptr);
      fs_grads *= cfg.omega_free;
      cg += fs_grads;
    }

    MatrixXd upstream(out.rows(), 1);
    upstream.col(0) = pack_code_grads(cg, n_p, n_z);
    ObjectNetGrads net_grads = ObjectNetGrads::zeros_like(objectnet);
    const MatrixXd dlat = objectnet_backward_batch(objectnet, cache, upstream, net_grads);
    const VectorXd grad = dlat.col(0) + 2.0 * cfg.omega_reg * u;
    opt_latent.step("u", u, grad, lr);
  }

  CompletionResult result;
  result.object_latent = u;
  result.stage1_codes = unpack_codes(objectnet_forward(objectnet, u), n_p, n_z);

  ShapeCodes refined = result.stage1_codes;
  Adam opt_codes;
  for (int it = 1; it <= cfg.refine_iterations; ++it) {
    Rng iter_rng = rng.fork(static_cast<std::uint64_t>(stage1_iters + it));
    const CompletionDraw draw = draw_completion_samples(partial, camera_origin, cfg, iter_rng);

    CodeGrads cg = CodeGrads::zeros_like(refined);
    loss_recon(refined, decoder, draw.near_surface, cfg.mixture_recon, &cg, nullptr);
    loss_reg(refined.latents, cfg.omega_reg, &cg);
    if (!draw.free_space.empty() && cfg.omega_free > 0.0) {
      CodeGrads fs_grads = CodeGrads::zeros_like(refined);
      loss_free_space(refined, decoder, draw.free_space, &fs_grads, nullptr);
      fs_grads *= cfg.omega_free;
      cg += fs_grads;
    }
    for (int p = 0; p < n_p; ++p) {
      const auto sp = static_cast<std::size_t>(p);
      opt_codes.step("p" + std::to_string(p) + ".z", refined.latents[sp], cg.dz[sp],
                     cfg.refine_lr);
    }
  }
  result.refined_codes = refined;
  result.mesh = reconstruct_mesh(refined, decoder, cfg.resolution);

  require(decoder_checksum(decoder) == decoder_digest, Errc::contract_violation,
          "decoder changed during completion");
  require(objectnet_checksum(objectnet) == objectnet_digest, Errc::contract_violation,
          "regressor changed during completion");
  return result;
}

}  // namespace psdf
