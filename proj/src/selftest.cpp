#include "psdf/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "psdf/checkpoint.hpp"
#include "psdf/losses.hpp"
#include "psdf/metrics.hpp"
#include "psdf/reconstruct.hpp"
#include "psdf/sampling.hpp"
#include "psdf/shapes.hpp"
#include "psdf/training.hpp"

namespace psdf {

namespace {

void expect(bool cond, const std::string& what) {
  require(cond, Errc::contract_violation, what);
}

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("psdf_selftest_" + name);
  }
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

ShapeCodes random_codes(int n_p, int n_z, Rng& rng) {
  ShapeCodes codes;
  for (int p = 0; p < n_p; ++p) {
    VectorXd z(n_z);
    for (int i = 0; i < n_z; ++i) z[i] = rng.normal() * 0.3;
    PatchExtrinsics e;
    e.c = 0.4 * rng.normal3();
    e.r = rng.uniform(0.3, 0.8);
    e.phi = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.2, 1.2), rng.uniform(-1.0, 1.0));
    codes.latents.push_back(z);
    codes.extrinsics.push_back(e);
  }
  return codes;
}

}  // namespace

int run_selftest(std::ostream& out) {
  int failures = 0;
  auto check = [&](const char* name, const std::function<void()>& fn) {
    try {
      fn();
      out << "[ ok ] " << name << "\n";
    } catch (const std::exception& ex) {
      ++failures;
      out << "[FAIL] " << name << ": " << ex.what() << "\n";
    }
  };

  check("mesh: icosphere is watertight and edge-manifold", [] {
    const TriMesh m = make_icosphere(3);
    expect(!has_open_edges(m), "icosphere has open edges");
    expect(is_edge_manifold(m), "icosphere is not edge-manifold");
  });

  check("mesh: normalize_unit_sphere centers and scales", [] {
    TriMesh m = make_box_mesh(Vec3(0.2, 0.3, 0.1), Vec3(0.4, -0.2, 0.1));
    const NormalizeResult norm = normalize_unit_sphere(m);
    Vec3 lo, hi;
    norm.mesh.bounding_box(lo, hi);
    expect((lo + hi).norm() < 1e-12, "bounding box not centered");
    double max_norm = 0.0;
    for (const auto& v : norm.mesh.vertices) max_norm = std::max(max_norm, v.norm());
    expect(std::abs(max_norm - 1.0) < 1e-12, "farthest vertex norm != 1");
  });

  check("shapes: analytic sphere SDF is exact", [] {
    const AnalyticShape s = AnalyticShape::make_sphere(0.7);
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
      const Vec3 x = rng.normal3();
      expect(std::abs(analytic_sdf(s, x) - (x.norm() - 0.7)) < 1e-12, "sphere SDF mismatch");
    }
  });

  check("bvh: winding number classifies inside/outside", [] {
    const TriMesh m = make_icosphere(3);
    const TriangleBvh bvh(m);
    Rng rng(12);
    for (int i = 0; i < 50; ++i) {
      Vec3 d = rng.normal3();
      d /= d.norm();
      expect(bvh.contains(0.5 * d), "point at r=0.5 not inside");
      expect(!bvh.contains(1.5 * d), "point at r=1.5 not outside");
    }
  });

  check("sampling: render_partial is deterministic", [] {
    const TriMesh m = make_icosphere(2);
    CameraView cam;
    cam.width = 24;
    cam.height = 24;
    const PartialObservation a = render_partial(m, cam, 1);
    const PartialObservation b = render_partial(m, cam, 1);
    expect(a.samples.size() == b.samples.size() && a.samples.size() > 0,
           "partial view size mismatch");
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      expect((a.samples.points[i] - b.samples.points[i]).norm() == 0.0,
             "partial view points differ");
    }
  });

  check("sampling: SDF set respects the truncation band", [] {
    const TriMesh m = make_icosphere(3);
    const SdfSampleSet set = sample_sdf_set(m, 2000, 0.1, 7);
    expect(set.size() == 2000, "sample count mismatch");
    for (double v : set.sdf) expect(std::abs(v) <= 0.1, "sample outside the truncation band");
  });

  check("sampling: PNSD round trip is bit-exact", [] {
    const TriMesh m = make_icosphere(2);
    SdfSampleSet set = sample_sdf_set(m, 500, 0.1, 3);
    TempFile tmp("roundtrip.pnsd");
    save_sdf_samples(set, tmp.path);
    const SdfSampleSet back = load_sdf_samples(tmp.path);
    const SdfSampleSet again = [&] {
      TempFile tmp2("roundtrip2.pnsd");
      save_sdf_samples(back, tmp2.path);
      return load_sdf_samples(tmp2.path);
    }();
    expect(back.size() == set.size(), "record count changed");
    for (std::size_t i = 0; i < back.size(); ++i) {
      expect(back.sdf[i] == again.sdf[i] && (back.points[i] - again.points[i]).norm() == 0.0,
             "second round trip not bit-exact");
    }
  });

  check("sampling: zero noise is the identity", [] {
    const TriMesh m = make_icosphere(2);
    const SdfSampleSet set = sample_sdf_set(m, 500, 0.1, 3);
    const SdfSampleSet noisy = add_sdf_noise(set, 0.0, 5);
    for (std::size_t i = 0; i < set.size(); ++i) {
      expect(noisy.sdf[i] == set.sdf[i], "zero-noise pass changed a value");
    }
  });

  check("patchrep: Euler rotations are orthonormal and round-trip", [] {
    Rng rng(21);
    for (int i = 0; i < 100; ++i) {
      const Vec3 phi(rng.uniform(-3.0, 3.0), rng.uniform(-1.4, 1.4), rng.uniform(-3.0, 3.0));
      const Mat3 R = euler_xyz(phi);
      expect((R.transpose() * R - Mat3::Identity()).norm() < 1e-12, "R not orthonormal");
      expect(std::abs(R.determinant() - 1.0) < 1e-12, "det != 1");
      const Mat3 back = euler_xyz(euler_from_matrix(R));
      expect((back - R).norm() < 1e-9, "Euler extraction does not round-trip");
    }
  });

  check("patchrep: euler_aligning_z aligns the patch z-axis", [] {
    Rng rng(22);
    for (int i = 0; i < 100; ++i) {
      Vec3 n = rng.normal3();
      n /= n.norm();
      const Mat3 R = euler_xyz(euler_aligning_z(n));
      expect((R * Vec3(0, 0, 1) - n).norm() < 1e-12, "z-axis misaligned");
    }
  });

  check("patchrep: blend weight closed forms", [] {
    expect(std::abs(blend_weight(0.0, 1.0) - (1.0 - std::exp(-4.5))) <= 1e-12,
           "center weight mismatch");
    expect(blend_weight(1.0, 1.0) == 0.0, "boundary weight not exactly zero");
  });

  check("patchrep: single covering patch reproduces the raw decoder", [] {
    Rng rng(23);
    const DecoderWeights w = init_decoder_weights(8, 16, 31);
    ShapeCodes codes = random_codes(1, 8, rng);
    codes.extrinsics[0].c = Vec3::Zero();
    codes.extrinsics[0].r = 1.0;
    const Vec3 x(0.2, -0.1, 0.3);
    const double f =
        decoder_forward(w, codes.latents[0], to_local_point(codes.extrinsics[0], x));
    expect(std::abs(blend_sdf(codes, w, x) - f) <= 1e-12, "blend != decoder inside one patch");
    expect(blend_sdf(codes, w, Vec3(5, 5, 5)) == 1.0, "uncovered point != 1");
  });

  check("patchrep: blended field is rigidly equivariant", [] {
    Rng rng(24);
    const DecoderWeights w = init_decoder_weights(6, 16, 32);
    const ShapeCodes codes = random_codes(3, 6, rng);
    const Mat3 S = euler_xyz(Vec3(0.3, -0.7, 1.1));
    const Vec3 t(0.2, 0.1, -0.3);
    ShapeCodes moved = codes;
    for (auto& e : moved.extrinsics) {
      e.c = S * e.c + t;
      e.phi = euler_from_matrix(S * euler_xyz(e.phi));
    }
    for (int i = 0; i < 20; ++i) {
      const Vec3 x = 0.5 * rng.normal3();
      expect(std::abs(blend_sdf(moved, w, S * x + t) - blend_sdf(codes, w, x)) < 1e-9,
             "field not equivariant under a rigid motion");
    }
  });

  check("networks: weight-normalized rows have norm |g|", [] {
    const DecoderWeights w = init_decoder_weights(8, 16, 33);
    for (const auto& layer : w.layers) {
      const MatrixXd W = layer.effective();
      for (Eigen::Index r = 0; r < W.rows(); ++r) {
        expect(std::abs(W.row(r).norm() - std::abs(layer.g[r])) < 1e-12,
               "effective row norm != |g|");
      }
    }
  });

  check("networks: decoder gradients match finite differences (spot check)", [] {
    DecoderWeights w = init_decoder_weights(4, 8, 34);
    Rng rng(35);
    VectorXd input(w.input_dim());
    for (Eigen::Index i = 0; i < input.size(); ++i) input[i] = rng.normal() * 0.5;
    MatrixXd in_mat = input;
    DecoderBatchCache cache;
    decoder_forward_batch(w, in_mat, &cache);
    DecoderGrads grads = DecoderGrads::zeros_like(w);
    Eigen::RowVectorXd upstream(1);
    upstream[0] = 1.0;
    const MatrixXd dinput = decoder_backward_batch(w, cache, upstream, grads);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < input.size(); i += 3) {
      VectorXd lo = input, hi = input;
      lo[i] -= h;
      hi[i] += h;
      const double fd = (decoder_forward(w, hi.head(w.n_z), hi.tail(3)) -
                         decoder_forward(w, lo.head(w.n_z), lo.tail(3))) /
                        (2 * h);
      expect(std::abs(dinput(i, 0) - fd) < 1e-5 * std::max(1.0, std::abs(fd)),
             "input gradient mismatch");
    }
  });

  check("networks: regressor scale multiplier rescales only radius slots", [] {
    ObjectNetWeights w = init_objectnet_weights(16, 32, 3, 8, 36);
    Rng rng(37);
    VectorXd u(16);
    for (int i = 0; i < 16; ++i) u[i] = rng.normal();
    const VectorXd base = objectnet_forward(w, u);
    w.scale_multiplier = 2.0;
    const VectorXd scaled = objectnet_forward(w, u);
    for (int p = 0; p < w.n_p; ++p) {
      const int rs = w.r_slot(p);
      expect(std::abs(scaled[rs] - 2.0 * base[rs]) < 1e-12, "radius slot not rescaled");
    }
    int checked = 0;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      bool is_r = false;
      for (int p = 0; p < w.n_p; ++p) is_r = is_r || i == w.r_slot(p);
      if (!is_r) {
        expect(scaled[i] == base[i], "non-radius slot changed");
        ++checked;
      }
    }
    expect(checked > 0, "no non-radius slots checked");
  });

  check("networks: Adam is deterministic", [] {
    Adam a, b;
    VectorXd pa = VectorXd::Ones(5), pb = VectorXd::Ones(5);
    VectorXd g(5);
    g << 0.1, -0.2, 0.3, -0.4, 0.5;
    for (int i = 0; i < 10; ++i) {
      a.step("p", pa, g, 1e-2);
      b.step("p", pb, g, 1e-2);
    }
    expect((pa - pb).norm() == 0.0, "two identical Adam runs diverged");
  });

  check("losses: scale/variance/regularizer closed forms", [] {
    std::vector<PatchExtrinsics> ext(2);
    ext[0].r = 0.01;
    ext[1].r = 0.03;
    LossWeights lw;
    lw.sur = lw.cov = lw.rot = 0.0;
    lw.scl = 0.01;
    lw.var = 0.01;
    SurfaceSamples surf;
    surf.points.push_back(Vec3(0, 0, 1));
    surf.normals.push_back(Vec3(0, 0, 1));
    const PointKdTree tree(surf.points);
    const ExtTerms terms = loss_ext(ext, surf, tree, lw);
    expect(std::abs(terms.scl - 0.01 * (0.01 * 0.01 + 0.03 * 0.03) / 2) <= 1e-15,
           "scale loss mismatch");
    expect(std::abs(terms.var - 0.01 * 1e-4) <= 1e-15, "variance loss mismatch");
    std::vector<VectorXd> latents{VectorXd::Constant(2, 0.1), VectorXd::Constant(2, 0.1)};
    expect(std::abs(loss_reg(latents, 1e-2) - 1e-2 * 0.02) <= 1e-15, "reg loss mismatch");
  });

  check("losses: report total equals the sum of its terms", [] {
    Rng rng(41);
    const DecoderWeights w = init_decoder_weights(6, 16, 42);
    const ShapeCodes codes = random_codes(3, 6, rng);
    const TriMesh m = make_icosphere(2);
    const SdfSampleSet samples = sample_sdf_set(m, 400, 0.1, 43);
    const SurfaceSamples surf = sample_surface(m, 300, 44);
    const PointKdTree tree(surf.points);
    LossWeights lw;
    const LossReport rep = loss_total(codes, w, samples, surf, tree, lw, false);
    const double sum = rep.recon + rep.sur + rep.cov + rep.rot + rep.scl + rep.var + rep.reg +
                       rep.free_space + rep.tether;
    expect(std::abs(rep.total - sum) <= 1e-12, "total != sum of terms");
  });

  check("training: learning-rate halving schedule", [] {
    expect(lr_at_epoch(1e-3, 0, 200) == 1e-3, "epoch 0");
    expect(lr_at_epoch(1e-3, 199, 200) == 1e-3, "epoch 199");
    expect(lr_at_epoch(1e-3, 200, 200) == 0.5e-3, "epoch 200");
    expect(lr_at_epoch(1e-3, 400, 200) == 0.25e-3, "epoch 400");
  });

  check("training: regularizer ramp", [] {
    expect(omega_reg_at_epoch(1e-4, 0, 400) == 0.0, "epoch 0");
    expect(omega_reg_at_epoch(1e-4, 200, 400) == 0.5e-4, "epoch 200");
    expect(omega_reg_at_epoch(1e-4, 400, 400) == 1e-4, "epoch 400");
    expect(omega_reg_at_epoch(1e-4, 1000, 400) == 1e-4, "epoch 1000");
  });

  check("training: config JSON round trip preserves the hash", [] {
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.seed = 99;
    cfg.weights.cov = 123.5;
    const TrainConfig back = train_config_from_json_text(train_config_to_json_text(cfg));
    expect(config_hash(cfg) == config_hash(back), "hash changed across round trip");
  });

  check("checkpoint: decoder checkpoint round trip", [] {
    Rng rng(51);
    DecoderCheckpoint ckpt;
    ckpt.decoder = init_decoder_weights(6, 16, 52);
    ckpt.codes.push_back(random_codes(3, 6, rng));
    TempFile tmp("decoder.pnwt");
    save_checkpoint(ckpt, tmp.path);
    expect(checkpoint_kind(tmp.path) == 1, "kind mismatch");
    const DecoderCheckpoint back = load_decoder_checkpoint(tmp.path);
    expect(back.decoder.n_z == 6 && back.codes.size() == 1, "structure mismatch");
    expect((back.codes[0].latents[0] - ckpt.codes[0].latents[0]).cwiseAbs().maxCoeff() < 1e-6,
           "latent drifted beyond f32 rounding");
  });

  check("reconstruct: constant positive field gives an empty mesh", [] {
    const TriMesh m = marching_cubes_scalar([](const Vec3&) { return 1.0; }, 16);
    expect(m.empty(), "expected empty mesh");
  });

  check("reconstruct: marching cubes on the unit sphere", [] {
    const TriMesh m =
        marching_cubes_scalar([](const Vec3& p) { return p.norm() - 1.0; }, 64);
    expect(!m.empty(), "empty sphere mesh");
    expect(!has_open_edges(m), "sphere mesh has open edges");
    expect(is_edge_manifold(m), "sphere mesh not edge-manifold");
    const double bound = 2.0 * std::sqrt(3.0) / 63.0;
    for (const auto& v : m.vertices) {
      expect(std::abs(v.norm() - 1.0) < bound, "vertex radial error too large");
    }
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
      const Vec3 centroid = (m.vertices[static_cast<std::size_t>(m.triangles[t][0])] +
                             m.vertices[static_cast<std::size_t>(m.triangles[t][1])] +
                             m.vertices[static_cast<std::size_t>(m.triangles[t][2])]) /
                            3.0;
      expect(m.triangle_normal(static_cast<int>(t)).dot(centroid) > 0.0,
             "triangle not oriented outward");
    }
  });

  check("reconstruct: identity deformation is bitwise identity", [] {
    Rng rng(61);
    const DecoderWeights w = init_decoder_weights(6, 16, 62);
    const ShapeCodes codes = random_codes(4, 6, rng);
    const DeformSpec spec(4);
    const ShapeCodes moved = deform_codes(codes, spec);
    const TriMesh a = reconstruct_mesh(codes, w, 24);
    const TriMesh b = reconstruct_mesh(moved, w, 24);
    expect(a.vertices.size() == b.vertices.size() && a.triangles.size() == b.triangles.size(),
           "mesh size changed");
    for (std::size_t i = 0; i < a.vertices.size(); ++i) {
      expect((a.vertices[i] - b.vertices[i]).norm() == 0.0, "vertex moved");
    }
  });

  check("reconstruct: prior fit/sample/round trip", [] {
    VectorXd u(4);
    u << 1.0, -2.0, 0.5, 3.0;
    const GaussianPrior prior = fit_prior({u, -u});
    expect(prior.mean.cwiseAbs().maxCoeff() <= 1e-12, "mean of +/-u not zero");
    const MatrixXd expected =
        2.0 * u * u.transpose() + 1e-6 * MatrixXd::Identity(4, 4);
    expect((prior.covariance - expected).cwiseAbs().maxCoeff() <= 1e-12, "covariance mismatch");
    TempFile tmp("prior.pngp");
    save_prior(prior, tmp.path);
    const GaussianPrior back = load_prior(tmp.path);
    expect((back.mean - prior.mean).norm() == 0.0 &&
               (back.covariance - prior.covariance).norm() == 0.0,
           "prior round trip not exact");
    const VectorXd s1 = sample_prior(prior, 7);
    const VectorXd s2 = sample_prior(prior, 7);
    expect((s1 - s2).norm() == 0.0, "prior sampling not deterministic");
  });

  check("reconstruct: interpolation endpoints decode the inputs", [] {
    const ObjectNetWeights w = init_objectnet_weights(8, 16, 2, 4, 71);
    Rng rng(72);
    VectorXd a(8), b(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    const ShapeCodes ca = interpolate_codes(w, a, b, 0.0);
    const ShapeCodes cb = interpolate_codes(w, a, b, 1.0);
    const ShapeCodes da = unpack_codes(objectnet_forward(w, a), 2, 4);
    const ShapeCodes db = unpack_codes(objectnet_forward(w, b), 2, 4);
    expect((ca.latents[0] - da.latents[0]).norm() == 0.0, "t=0 endpoint mismatch");
    expect((cb.latents[1] - db.latents[1]).norm() == 0.0, "t=1 endpoint mismatch");
  });

  check("metrics: identical meshes and empty-prediction conventions", [] {
    const TriMesh m = make_icosphere(2);
    expect(iou(m, m, 5, 2000) == 100.0, "identical IoU != 100");
    expect(chamfer(m, m, 5, 2000) < 1e-8, "identical Chamfer not ~0");
    expect(f_score(m, m, 5, 2000) == 100.0, "identical F-score != 100");
    const TriMesh empty;
    expect(iou(m, empty, 5, 1000) == 0.0, "empty IoU != 0");
    expect(chamfer(m, empty, 5, 1000) == 100.0, "empty Chamfer != 100");
    expect(f_score(m, empty, 5, 1000) == 0.0, "empty F-score != 0");
  });

  check("metrics: Chamfer scales quadratically", [] {
    const TriMesh a = make_icosphere(2, 1.0);
    const TriMesh b = make_icosphere(2, 0.9);
    TriMesh a2 = a, b2 = b;
    for (auto& v : a2.vertices) v *= 2.0;
    for (auto& v : b2.vertices) v *= 2.0;
    const double c1 = chamfer(a, b, 9, 2000);
    const double c2 = chamfer(a2, b2, 9, 2000);
    expect(std::abs(c2 - 4.0 * c1) < 1e-9 * std::max(1.0, c2), "scaling law violated");
  });

  return failures;
}

}  // namespace psdf
