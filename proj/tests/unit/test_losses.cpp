#include <cmath>

#include "doctest.h"
#include "psdf/losses.hpp"
#include "testers.hpp"

using namespace psdf;
using testsupport::FdChecker;
using testsupport::constant_decoder;
using testsupport::random_codes;

namespace {

SurfaceSamples single_point(const Vec3& p, const Vec3& n) {
  SurfaceSamples s;
  s.points.push_back(p);
  s.normals.push_back(n);
  return s;
}

std::vector<PatchExtrinsics> single_patch(const Vec3& c, double r, const Vec3& phi = Vec3::Zero()) {
  PatchExtrinsics e;
  e.c = c;
  e.r = r;
  e.phi = phi;
  return {e};
}

LossWeights only(double LossWeights::* field, double value) {
  LossWeights lw;
  lw.sur = lw.cov = lw.rot = lw.scl = lw.var = lw.reg = 0.0;
  lw.*field = value;
  return lw;
}

}  // namespace

TEST_CASE("surface loss hand values and clamp behavior") {
  const SurfaceSamples surf = single_point(Vec3::Zero(), Vec3(0, 0, 1));
  const PointKdTree tree(surf.points);
  const LossWeights lw = only(&LossWeights::sur, 5.0);

  auto ext = single_patch(Vec3(0.3, 0, 0), 0.5);
  ShapeCodes codes;
  codes.latents.push_back(VectorXd::Zero(4));
  codes.extrinsics = ext;
  CodeGrads grads = CodeGrads::zeros_like(codes);
  ExtTerms terms = loss_ext(ext, surf, tree, lw, &grads);
  CHECK(std::abs(terms.sur - 0.45) < 1e-12);
  CHECK(grads.dc[0].norm() > 0.0);

  ext = single_patch(Vec3(0.1, 0, 0), 0.5);
  grads = CodeGrads::zeros_like(codes);
  terms = loss_ext(ext, surf, tree, lw, &grads);
  CHECK(std::abs(terms.sur - 0.30) < 1e-12);
  CHECK(grads.dc[0].norm() == 0.0);  // clamped branch has exactly zero gradient
}

TEST_CASE("rotation loss hand values") {
  const LossWeights lw = only(&LossWeights::rot, 1.0);
  ShapeCodes codes;
  codes.latents.push_back(VectorXd::Zero(4));

  const auto rot_term = [&](const Vec3& normal) {
    const SurfaceSamples surf = single_point(Vec3::Zero(), normal);
    const PointKdTree tree(surf.points);
    const auto ext = single_patch(Vec3::Zero(), 0.5);  // phi = 0: patch axis is +z
    return loss_ext(ext, surf, tree, lw).rot;
  };
  CHECK(std::abs(rot_term(Vec3(0, 0, 1)) - 0.0) < 1e-12);
  CHECK(std::abs(rot_term(Vec3(1, 0, 0)) - 1.0) < 1e-12);
  CHECK(std::abs(rot_term(Vec3(0, 0, -1)) - 4.0) < 1e-12);
}

TEST_CASE("scale and variance loss hand values") {
  const SurfaceSamples surf = single_point(Vec3::Zero(), Vec3(0, 0, 1));
  const PointKdTree tree(surf.points);

  std::vector<PatchExtrinsics> ext(2);
  ext[0].r = 0.2;
  ext[1].r = 0.2;
  CHECK(std::abs(loss_ext(ext, surf, tree, only(&LossWeights::scl, 0.01)).scl - 4e-4) < 1e-12);

  ext[0].r = 0.1;
  ext[1].r = 0.3;
  CHECK(std::abs(loss_ext(ext, surf, tree, only(&LossWeights::var, 0.01)).var - 1e-4) < 1e-12);
  ext[1].r = 0.1;
  CHECK(loss_ext(ext, surf, tree, only(&LossWeights::var, 0.01)).var == 0.0);
}

TEST_CASE("coverage loss hand value and covered-case zero") {
  const LossWeights lw = only(&LossWeights::cov, 200.0);
  const SurfaceSamples surf = single_point(Vec3(0.25, 0, 0), Vec3(1, 0, 0));
  const PointKdTree tree(surf.points);
  const auto ext = single_patch(Vec3::Zero(), 0.2);  // gap = 0.05
  CHECK(std::abs(loss_ext(ext, surf, tree, lw).cov - 10.0) < 1e-12);

  const auto covering = single_patch(Vec3::Zero(), 0.5);
  CHECK(loss_ext(covering, surf, tree, lw).cov == 0.0);
}

TEST_CASE("latent regularizer hand value and exact gradient") {
  VectorXd z = VectorXd::Zero(6);
  z[0] = 2.0;  // squared norm 4
  std::vector<VectorXd> latents{z};
  CHECK(std::abs(loss_reg(latents, 1e-4) - 4e-4) < 1e-15);
  CHECK(loss_reg({VectorXd::Zero(6)}, 1e-4) == 0.0);

  ShapeCodes codes;
  codes.latents = {z, VectorXd::Ones(6)};
  codes.extrinsics.resize(2);
  CodeGrads grads = CodeGrads::zeros_like(codes);
  loss_reg(codes.latents, 1e-4, &grads);
  for (int p = 0; p < 2; ++p)
    CHECK((grads.dz[static_cast<std::size_t>(p)] - 2.0 * 1e-4 * codes.latents[static_cast<std::size_t>(p)] / 2.0)
              .norm() < 1e-18);
}

TEST_CASE("reconstruction loss: constant error, empty patches, outside samples") {
  const DecoderWeights dec = constant_decoder(4, 8, 0.05);
  ShapeCodes codes;
  codes.latents.push_back(VectorXd::Zero(4));
  codes.extrinsics = single_patch(Vec3::Zero(), 0.5);

  SdfSampleSet samples;
  samples.truncation = 0.1;
  for (int i = 0; i < 10; ++i) {
    samples.points.push_back(Vec3(0.03 * i, 0, 0));
    samples.sdf.push_back(0.0);
  }
  CHECK(std::abs(loss_recon(codes, dec, samples, false) - 0.05) < 1e-12);

  // Matching targets zero the loss.
  SdfSampleSet exact = samples;
  std::fill(exact.sdf.begin(), exact.sdf.end(), std::tanh(std::atanh(0.05)));
  CHECK(loss_recon(codes, dec, exact, false) < 1e-15);

  // A sample outside every patch contributes to no patch.
  SdfSampleSet extra = samples;
  extra.points.push_back(Vec3(5, 0, 0));
  extra.sdf.push_back(0.09);
  CHECK(loss_recon(codes, dec, extra, false) ==
        doctest::Approx(loss_recon(codes, dec, samples, false)).epsilon(1e-15));

  // An empty patch dilutes the patch mean instead of dropping out.
  codes.latents.push_back(VectorXd::Zero(4));
  PatchExtrinsics far;
  far.c = Vec3(10, 0, 0);
  far.r = 0.5;
  codes.extrinsics.push_back(far);
  CHECK(std::abs(loss_recon(codes, dec, samples, false) - 0.025) < 1e-12);
}

TEST_CASE("mixture reconstruction averages blended error over all samples") {
  const DecoderWeights dec = constant_decoder(4, 8, 0.05);
  ShapeCodes codes;
  codes.latents.push_back(VectorXd::Zero(4));
  codes.extrinsics = single_patch(Vec3::Zero(), 0.5);

  SdfSampleSet samples;
  samples.truncation = 0.1;
  samples.points.push_back(Vec3(0.1, 0, 0));  // covered: |g - 0| = 0.05
  samples.sdf.push_back(0.0);
  samples.points.push_back(Vec3(3, 0, 0));  // uncovered: g = 1, |1 - 0.3| = 0.7
  samples.sdf.push_back(0.3);
  CHECK(std::abs(loss_recon(codes, dec, samples, true) - (0.05 + 0.7) / 2.0) < 1e-12);
}

TEST_CASE("free-space loss hinges on negative blended predictions") {
  ShapeCodes codes;
  codes.latents.push_back(VectorXd::Zero(4));
  codes.extrinsics = single_patch(Vec3::Zero(), 0.5);

  const std::vector<Vec3> pts{Vec3(0.1, 0, 0), Vec3(4, 0, 0)};
  CHECK(loss_free_space(codes, constant_decoder(4, 8, 0.05), pts) == 0.0);
  CHECK(std::abs(loss_free_space(codes, constant_decoder(4, 8, -0.05), pts) - 0.025) < 1e-12);
}

TEST_CASE("extrinsics losses match finite differences") {
  Rng rng(61);
  FdChecker fd;
  for (int trial = 0; trial < 6; ++trial) {
    SurfaceSamples surf;
    for (int i = 0; i < 40; ++i) {
      Vec3 n = rng.normal3().normalized();
      surf.points.push_back(n * rng.uniform(0.8, 1.1));
      surf.normals.push_back(n);
    }
    const PointKdTree tree(surf.points);
    LossWeights lw;  // all default weights active
    ShapeCodes codes = random_codes(3, 4, rng);
    CodeGrads grads = CodeGrads::zeros_like(codes);
    loss_ext(codes.extrinsics, surf, tree, lw, &grads);

    const auto value = [&](const std::vector<PatchExtrinsics>& e) {
      return loss_ext(e, surf, tree, lw).total();
    };
    for (int p = 0; p < 3; ++p) {
      const auto sp = static_cast<std::size_t>(p);
      for (int j = 0; j < 3; ++j) {
        fd.compare(
            [&](double h) {
              auto e = codes.extrinsics;
              e[sp].c[j] += h;
              return value(e);
            },
            grads.dc[sp][j]);
        fd.compare(
            [&](double h) {
              auto e = codes.extrinsics;
              e[sp].phi[j] += h;
              return value(e);
            },
            grads.dphi[sp][j]);
      }
      fd.compare(
          [&](double h) {
            auto e = codes.extrinsics;
            e[sp].r += h;
            return value(e);
          },
          grads.dr[sp]);
    }
  }
  CHECK(fd.ok());
  CHECK(fd.worst < 1e-5);
}

TEST_CASE("reconstruction and free-space losses match finite differences") {
  Rng rng(62);
  FdChecker fd;
  for (int trial = 0; trial < 4; ++trial) {
    const DecoderWeights dec = init_decoder_weights(5, 10, 80 + static_cast<std::uint64_t>(trial));
    ShapeCodes codes = random_codes(2, 5, rng);
    SdfSampleSet samples;
    samples.truncation = 0.1;
    for (int i = 0; i < 20; ++i) {
      samples.points.push_back(0.7 * rng.normal3());
      samples.sdf.push_back(rng.uniform(-0.1, 0.1));
    }
    std::vector<Vec3> free_pts;
    for (int i = 0; i < 8; ++i) free_pts.push_back(0.7 * rng.normal3());

    for (bool mixture : {false, true}) {
      CodeGrads grads = CodeGrads::zeros_like(codes);
      DecoderGrads dtheta = DecoderGrads::zeros_like(dec);
      loss_recon(codes, dec, samples, mixture, &grads, &dtheta);
      const auto value = [&](const ShapeCodes& c, const DecoderWeights& w) {
        return loss_recon(c, w, samples, mixture);
      };
      for (int p = 0; p < 2; ++p) {
        const auto sp = static_cast<std::size_t>(p);
        fd.compare(
            [&](double h) {
              ShapeCodes c = codes;
              c.latents[sp][1] += h;
              return value(c, dec);
            },
            grads.dz[sp][1]);
        fd.compare(
            [&](double h) {
              ShapeCodes c = codes;
              c.extrinsics[sp].c[0] += h;
              return value(c, dec);
            },
            grads.dc[sp][0]);
        fd.compare(
            [&](double h) {
              ShapeCodes c = codes;
              c.extrinsics[sp].r += h;
              return value(c, dec);
            },
            grads.dr[sp]);
        fd.compare(
            [&](double h) {
              ShapeCodes c = codes;
              c.extrinsics[sp].phi[2] += h;
              return value(c, dec);
            },
            grads.dphi[sp][2]);
      }
      fd.compare(
          [&](double h) {
            DecoderWeights w = dec;
            w.layers[0].V(2, 1) += h;
            return value(codes, w);
          },
          dtheta.V[0](2, 1));
      fd.compare(
          [&](double h) {
            DecoderWeights w = dec;
            w.layers[8].b[0] += h;
            return value(codes, w);
          },
          dtheta.b[8][0]);
    }

    CodeGrads fgrads = CodeGrads::zeros_like(codes);
    DecoderGrads ftheta = DecoderGrads::zeros_like(dec);
    loss_free_space(codes, dec, free_pts, &fgrads, &ftheta);
    fd.compare(
        [&](double h) {
          ShapeCodes c = codes;
          c.latents[0][0] += h;
          return loss_free_space(c, dec, free_pts);
        },
        fgrads.dz[0][0]);
    fd.compare(
        [&](double h) {
          ShapeCodes c = codes;
          c.extrinsics[1].c[1] += h;
          return loss_free_space(c, dec, free_pts);
        },
        fgrads.dc[1][1]);
    fd.compare(
        [&](double h) {
          DecoderWeights w = dec;
          w.layers[4].g[3] += h;
          return loss_free_space(codes, w, free_pts);
        },
        ftheta.g[4][3]);
  }
  CHECK(fd.ok());
  CHECK(fd.worst < 1e-5);
}

TEST_CASE("loss_total decomposes into its parts and has a coherent full gradient") {
  Rng rng(63);
  const DecoderWeights dec = init_decoder_weights(8, 12, 90);
  ShapeCodes codes = random_codes(2, 8, rng);
  SdfSampleSet samples;
  samples.truncation = 0.1;
  for (int i = 0; i < 20; ++i) {
    samples.points.push_back(0.7 * rng.normal3());
    samples.sdf.push_back(rng.uniform(-0.1, 0.1));
  }
  SurfaceSamples surf;
  for (int i = 0; i < 30; ++i) {
    Vec3 n = rng.normal3().normalized();
    surf.points.push_back(n);
    surf.normals.push_back(n);
  }
  const PointKdTree tree(surf.points);
  LossWeights lw;
  lw.reg = 1e-4;
  std::vector<Vec3> free_pts{Vec3(0.2, 0.1, 0), Vec3(0.5, 0, 0.2)};

  const LossReport rep = loss_total(codes, dec, samples, surf, tree, lw, false, &free_pts);
  const double parts = rep.recon + rep.sur + rep.cov + rep.rot + rep.scl + rep.var + rep.reg +
                       rep.free_space + rep.tether;
  CHECK(std::abs(rep.total - parts) < 1e-9);
  CHECK(rep.recon >= 0.0);
  CHECK(rep.sur >= 0.0);
  CHECK(rep.cov >= 0.0);

  // Full-gradient finite-difference agreement on a toy instance.
  FdChecker fd;
  CodeGrads grads = CodeGrads::zeros_like(codes);
  DecoderGrads dtheta = DecoderGrads::zeros_like(dec);
  loss_total(codes, dec, samples, surf, tree, lw, false, &free_pts, &grads, &dtheta);
  const auto value = [&](const ShapeCodes& c, const DecoderWeights& w) {
    return loss_total(c, w, samples, surf, tree, lw, false, &free_pts).total;
  };
  for (int p = 0; p < 2; ++p) {
    const auto sp = static_cast<std::size_t>(p);
    fd.compare(
        [&](double h) {
          ShapeCodes c = codes;
          c.latents[sp][3] += h;
          return value(c, dec);
        },
        grads.dz[sp][3]);
    for (int j = 0; j < 3; ++j) {
      fd.compare(
          [&](double h) {
            ShapeCodes c = codes;
            c.extrinsics[sp].c[j] += h;
            return value(c, dec);
          },
          grads.dc[sp][j]);
      fd.compare(
          [&](double h) {
            ShapeCodes c = codes;
            c.extrinsics[sp].phi[j] += h;
            return value(c, dec);
          },
          grads.dphi[sp][j]);
    }
    fd.compare(
        [&](double h) {
          ShapeCodes c = codes;
          c.extrinsics[sp].r += h;
          return value(c, dec);
        },
        grads.dr[sp]);
  }
  fd.compare(
      [&](double h) {
        DecoderWeights w = dec;
        w.layers[2].V(4, 5) += h;
        return value(codes, w);
      },
      dtheta.V[2](4, 5));
  CHECK(fd.ok());
  CHECK(fd.worst < 1e-5);

  // All weights zero with perfect predictions gives zero loss.
  LossWeights zero;
  zero.sur = zero.cov = zero.rot = zero.scl = zero.var = zero.reg = 0.0;
  const DecoderWeights perfect = constant_decoder(8, 12, 0.05);
  ShapeCodes pcodes;
  pcodes.latents.push_back(VectorXd::Zero(8));
  pcodes.extrinsics = single_patch(Vec3::Zero(), 2.0);
  SdfSampleSet psamples;
  psamples.truncation = 0.1;
  psamples.points.push_back(Vec3(0.1, 0, 0));
  psamples.sdf.push_back(std::tanh(std::atanh(0.05)));
  const LossReport zrep = loss_total(pcodes, perfect, psamples, surf, tree, zero, false);
  CHECK(zrep.total < 1e-12);
}

TEST_CASE("loss report arithmetic and weight validation") {
  LossReport a;
  a.total = 1.0;
  a.recon = 0.5;
  a.tether = 0.1;
  LossReport b = a;
  b *= 2.0;
  CHECK(b.total == 2.0);
  CHECK(b.tether == doctest::Approx(0.2));
  b += a;
  CHECK(b.recon == doctest::Approx(1.5));

  LossWeights lw;
  lw.sur = -1.0;
  CHECK_THROWS_AS(lw.validate(), Error);
  LossWeights lw2;
  lw2.sigma_cov = 0.0;
  CHECK_THROWS_AS(lw2.validate(), Error);
}
