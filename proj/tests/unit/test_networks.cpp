#include <cmath>

#include "doctest.h"
#include "psdf/checkpoint.hpp"
#include "psdf/networks.hpp"
#include "psdf/training.hpp"
#include "testers.hpp"

using namespace psdf;
using testsupport::FdChecker;
using testsupport::naive_decoder;
using testsupport::naive_objectnet;

TEST_CASE("weight-normalized rows scale to unit direction times gain") {
  Rng rng(51);
  WeightNormLayer layer;
  layer.V = MatrixXd::Zero(4, 5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) layer.V(i, j) = rng.normal();
  layer.V.row(2).setZero();  // degenerate row stays zero
  layer.g = VectorXd::LinSpaced(4, 0.5, 2.0);
  layer.b = VectorXd::Zero(4);
  const MatrixXd W = layer.effective();
  for (int i = 0; i < 4; ++i) {
    const double norm = layer.V.row(i).norm();
    for (int j = 0; j < 5; ++j) {
      const double expect = norm > 0.0 ? layer.g[i] * layer.V(i, j) / norm : 0.0;
      CHECK(W(i, j) == doctest::Approx(expect).epsilon(1e-14));
    }
  }
  CHECK(W.row(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("weight-norm gradient transform matches finite differences") {
  Rng rng(52);
  FdChecker fd;
  for (int trial = 0; trial < 10; ++trial) {
    WeightNormLayer layer;
    layer.V = MatrixXd::Zero(3, 4);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) layer.V(i, j) = rng.normal();
    layer.g = VectorXd::Zero(3);
    for (int i = 0; i < 3; ++i) layer.g[i] = rng.uniform(0.5, 1.5);
    layer.b = VectorXd::Zero(3);

    MatrixXd dW = MatrixXd::Zero(3, 4);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) dW(i, j) = rng.normal();

    MatrixXd dV;
    VectorXd dg;
    weight_norm_grad(layer, dW, dV, dg);

    const auto value = [&](const WeightNormLayer& l) { return (dW.array() * l.effective().array()).sum(); };
    for (int i = 0; i < 3; ++i) {
      fd.compare(
          [&](double h) {
            WeightNormLayer l = layer;
            l.g[i] += h;
            return value(l);
          },
          dg[i]);
      for (int j = 0; j < 4; ++j)
        fd.compare(
            [&](double h) {
              WeightNormLayer l = layer;
              l.V(i, j) += h;
              return value(l);
            },
            dV(i, j));
    }
  }
  CHECK(fd.ok());
  CHECK(fd.worst < 1e-5);
}

TEST_CASE("decoder forward agrees with the scalar reference implementation") {
  Rng rng(53);
  const DecoderWeights w = init_decoder_weights(10, 14, 7);
  for (int k = 0; k < 30; ++k) {
    VectorXd z(10);
    for (int i = 0; i < 10; ++i) z[i] = rng.normal();
    const Vec3 x = rng.normal3();
    const double lib = decoder_forward(w, z, x);
    CHECK(lib == doctest::Approx(naive_decoder(w, z, x)).epsilon(1e-12));
    CHECK(lib > -1.0);
    CHECK(lib < 1.0);
  }
}

TEST_CASE("decoder batch forward equals per-column evaluation") {
  Rng rng(54);
  const DecoderWeights w = init_decoder_weights(6, 12, 8);
  MatrixXd input(9, 5);
  for (int i = 0; i < input.size(); ++i) input.data()[i] = rng.normal();
  const Eigen::RowVectorXd y = decoder_forward_batch(w, input);
  for (int k = 0; k < 5; ++k) {
    const VectorXd z = input.col(k).head(6);
    const Vec3 x = input.col(k).tail<3>();
    CHECK(y[k] == doctest::Approx(decoder_forward(w, z, x)).epsilon(1e-13));
  }
}

TEST_CASE("decoder backward matches finite differences") {
  Rng rng(55);
  FdChecker fd;
  for (int trial = 0; trial < 6; ++trial) {
    const DecoderWeights w = init_decoder_weights(5, 9, 60 + static_cast<std::uint64_t>(trial));
    MatrixXd input(8, 4);
    for (int i = 0; i < input.size(); ++i) input.data()[i] = rng.normal();
    Eigen::RowVectorXd upstream(4);
    for (int k = 0; k < 4; ++k) upstream[k] = rng.normal();

    DecoderBatchCache cache;
    decoder_forward_batch(w, input, &cache);
    DecoderGrads grads = DecoderGrads::zeros_like(w);
    const MatrixXd dinput = decoder_backward_batch(w, cache, upstream, grads);

    const auto value = [&](const DecoderWeights& ww, const MatrixXd& in) {
      return (decoder_forward_batch(ww, in).array() * upstream.array()).sum();
    };
    for (int i = 0; i < 8; i += 3)
      for (int k = 0; k < 4; ++k)
        fd.compare(
            [&](double h) {
              MatrixXd in = input;
              in(i, k) += h;
              return value(w, in);
            },
            dinput(i, k));
    for (int l : {0, 4, 8}) {
      const auto sl = static_cast<std::size_t>(l);
      fd.compare(
          [&](double h) {
            DecoderWeights ww = w;
            ww.layers[sl].V(0, 1) += h;
            return value(ww, input);
          },
          grads.V[sl](0, 1));
      fd.compare(
          [&](double h) {
            DecoderWeights ww = w;
            ww.layers[sl].g[0] += h;
            return value(ww, input);
          },
          grads.g[sl][0]);
      fd.compare(
          [&](double h) {
            DecoderWeights ww = w;
            ww.layers[sl].b[0] += h;
            return value(ww, input);
          },
          grads.b[sl][0]);
    }
  }
  CHECK(fd.ok());
  CHECK(fd.worst < 1e-5);
}

TEST_CASE("object regressor forward matches the scalar reference and scales radius slots") {
  Rng rng(56);
  ObjectNetWeights w = init_objectnet_weights(12, 20, 3, 6, 9);
  CHECK(w.output_dim() == 3 * 13);
  for (int k = 0; k < 10; ++k) {
    VectorXd u(12);
    for (int i = 0; i < 12; ++i) u[i] = rng.normal();
    const VectorXd lib = objectnet_forward(w, u);
    const auto ref = naive_objectnet(w, u);
    REQUIRE(lib.size() == static_cast<Eigen::Index>(ref.size()));
    for (int i = 0; i < lib.size(); ++i)
      CHECK(lib[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }

  VectorXd u(12);
  for (int i = 0; i < 12; ++i) u[i] = rng.normal();
  const VectorXd base = objectnet_forward(w, u);
  w.scale_multiplier = 2.0;
  const VectorXd scaled = objectnet_forward(w, u);
  for (int p = 0; p < 3; ++p)
    CHECK(scaled[w.r_slot(p)] == doctest::Approx(2.0 * base[w.r_slot(p)]).epsilon(1e-15));
  int changed = 0;
  for (int i = 0; i < base.size(); ++i)
    if (scaled[i] != base[i]) ++changed;
  CHECK(changed <= 3);  // only the radius slots move
}

TEST_CASE("object regressor backward matches finite differences") {
  Rng rng(57);
  FdChecker fd;
  for (int trial = 0; trial < 5; ++trial) {
    ObjectNetWeights w = init_objectnet_weights(8, 12, 2, 5, 70 + static_cast<std::uint64_t>(trial));
    w.scale_multiplier = 1.3;  // exercise the radius-slot chain rule
    MatrixXd latents(8, 3);
    for (int i = 0; i < latents.size(); ++i) latents.data()[i] = rng.normal();
    MatrixXd upstream(w.output_dim(), 3);
    for (int i = 0; i < upstream.size(); ++i) upstream.data()[i] = rng.normal();

    ObjectNetBatchCache cache;
    objectnet_forward_batch(w, latents, &cache);
    ObjectNetGrads grads = ObjectNetGrads::zeros_like(w);
    const MatrixXd dlatents = objectnet_backward_batch(w, cache, upstream, grads);

    const auto value = [&](const ObjectNetWeights& ww, const MatrixXd& in) {
      return (objectnet_forward_batch(ww, in).array() * upstream.array()).sum();
    };
    for (int i = 0; i < 8; i += 2)
      for (int k = 0; k < 3; ++k)
        fd.compare(
            [&](double h) {
              MatrixXd in = latents;
              in(i, k) += h;
              return value(w, in);
            },
            dlatents(i, k));
    for (int l = 0; l < 4; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      fd.compare(
          [&](double h) {
            ObjectNetWeights ww = w;
            ww.layers[sl].V(1, 2) += h;
            return value(ww, latents);
          },
          grads.V[sl](1, 2));
      fd.compare(
          [&](double h) {
            ObjectNetWeights ww = w;
            ww.layers[sl].g[1] += h;
            return value(ww, latents);
          },
          grads.g[sl][1]);
      fd.compare(
          [&](double h) {
            ObjectNetWeights ww = w;
            ww.layers[sl].b[1] += h;
            return value(ww, latents);
          },
          grads.b[sl][1]);
    }
  }
  CHECK(fd.ok());
  CHECK(fd.worst < 1e-5);
}

TEST_CASE("code packing mirrors the regressor output layout") {
  const int n_p = 3, n_z = 5;
  const int block = n_z + 7;
  VectorXd out(n_p * block);
  for (int i = 0; i < out.size(); ++i) out[i] = i;
  const ShapeCodes codes = unpack_codes(out, n_p, n_z);
  REQUIRE(codes.n_patches() == n_p);
  for (int p = 0; p < n_p; ++p) {
    const auto sp = static_cast<std::size_t>(p);
    const int base = p * block;
    for (int i = 0; i < n_z; ++i) CHECK(codes.latents[sp][i] == base + i);
    for (int d = 0; d < 3; ++d) CHECK(codes.extrinsics[sp].c[d] == base + n_z + d);
    CHECK(codes.extrinsics[sp].r == base + n_z + 3);
    for (int d = 0; d < 3; ++d) CHECK(codes.extrinsics[sp].phi[d] == base + n_z + 4 + d);
  }

  CodeGrads grads = CodeGrads::zeros_like(codes);
  for (int p = 0; p < n_p; ++p) {
    const auto sp = static_cast<std::size_t>(p);
    for (int i = 0; i < n_z; ++i) grads.dz[sp][i] = 100 + p * block + i;
    for (int d = 0; d < 3; ++d) grads.dc[sp][d] = 100 + p * block + n_z + d;
    grads.dr[sp] = 100 + p * block + n_z + 3;
    for (int d = 0; d < 3; ++d) grads.dphi[sp][d] = 100 + p * block + n_z + 4 + d;
  }
  const VectorXd packed = pack_code_grads(grads, n_p, n_z);
  REQUIRE(packed.size() == out.size());
  for (int i = 0; i < packed.size(); ++i) CHECK(packed[i] == 100 + i);
}

TEST_CASE("adam follows the closed-form update and keeps per-name state") {
  Adam adam;
  MatrixXd a(1, 1), b(1, 1);
  a(0, 0) = 1.0;
  b(0, 0) = 1.0;
  MatrixXd g1(1, 1), g2(1, 1);
  g1(0, 0) = 0.4;
  g2(0, 0) = -0.2;
  const double lr = 0.1;

  adam.step("a", a, g1, lr);
  // First step: mhat = g, vhat = g^2, update = lr * g / (|g| + eps).
  double m = 0.1 * 0.4, v = 0.001 * 0.16;
  double mhat = m / 0.1, vhat = v / 0.001;
  double expect_a = 1.0 - lr * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(a(0, 0) == doctest::Approx(expect_a).epsilon(1e-14));

  adam.step("a", a, g2, lr);
  m = 0.9 * m + 0.1 * (-0.2);
  v = 0.999 * v + 0.001 * 0.04;
  mhat = m / (1.0 - 0.9 * 0.9);
  vhat = v / (1.0 - 0.999 * 0.999);
  expect_a -= lr * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(a(0, 0) == doctest::Approx(expect_a).epsilon(1e-12));
  CHECK(adam.steps("a") == 2);

  // A fresh name starts with its own bias correction.
  adam.step("b", b, g1, lr);
  CHECK(b(0, 0) == doctest::Approx(1.0 - lr * 0.4 / (0.4 + 1e-8)).epsilon(1e-12));
  CHECK(adam.steps("b") == 1);
  CHECK(adam.steps("missing") == 0);

  adam.reset();
  CHECK(adam.steps("a") == 0);
}

TEST_CASE("initializers are deterministic and validated") {
  const DecoderWeights a = init_decoder_weights(16, 32, 5);
  const DecoderWeights b = init_decoder_weights(16, 32, 5);
  const DecoderWeights c = init_decoder_weights(16, 32, 6);
  a.validate();
  CHECK(decoder_checksum(a) == decoder_checksum(b));
  CHECK(decoder_checksum(a) != decoder_checksum(c));
  CHECK(a.layers[0].fan_in() == 19);
  CHECK(a.layers[4].fan_in() == 32 + 19);
  CHECK(a.layers[8].fan_out() == 1);

  const ObjectNetWeights o = init_objectnet_weights(24, 48, 4, 16, 5);
  o.validate();
  CHECK(o.layers[0].fan_in() == 24);
  CHECK(o.layers[3].fan_out() == 4 * 23);
  CHECK(objectnet_checksum(o) == objectnet_checksum(init_objectnet_weights(24, 48, 4, 16, 5)));
}
