#pragma once

// Shared helpers for the unit and acceptance suites: a kink-aware central
// finite-difference checker and plain-loop reference implementations of the
// networks, kept independent of the library's Eigen code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "psdf/networks.hpp"
#include "psdf/patchrep.hpp"

namespace testsupport {

using psdf::DecoderWeights;
using psdf::Mat3;
using psdf::MatrixXd;
using psdf::ObjectNetWeights;
using psdf::PatchExtrinsics;
using psdf::Rng;
using psdf::ShapeCodes;
using psdf::Vec3;
using psdf::VectorXd;
using psdf::WeightNormLayer;

// Central differences at two step sizes. Draws where the estimates disagree
// straddle a kink (ReLU, patch membership, clamp branches) and yield no
// verdict. The surviving pair is Richardson-combined to cancel the h^2
// truncation term, and comparisons below the rounding noise of the function
// evaluations (|f| * eps / step, which dominates when the true derivative is
// orders of magnitude smaller than the summands) count as agreement.
struct FdChecker {
  double step = 1e-6;
  double tolerance = 1e-5;
  int checked = 0;
  int rejected = 0;
  int failed = 0;
  double worst = 0.0;

  void compare(const std::function<double(double)>& f, double analytic) {
    const double fp = f(step), fm = f(-step);
    const double gp = f(step / 2), gm = f(-step / 2);
    const double d1 = (fp - fm) / (2.0 * step);
    const double d2 = (gp - gm) / step;
    const double scale = std::max({std::abs(d1), std::abs(d2), 1.0});
    if (std::abs(d1 - d2) > 1e-4 * scale) {
      ++rejected;
      return;
    }
    ++checked;
    const double rich = (4.0 * d2 - d1) / 3.0;
    const double fscale = std::max({std::abs(fp), std::abs(fm), std::abs(gp), std::abs(gm), 1.0});
    const double noise = std::max(5e-9, 5e-15 * fscale / step);
    const double abs_err = std::abs(analytic - rich);
    if (abs_err <= noise) return;
    const double err = abs_err / std::max({std::abs(analytic), std::abs(rich), 1e-6});
    worst = std::max(worst, err);
    if (err > tolerance) ++failed;
  }

  bool ok() const { return failed == 0 && checked > 0; }
};

// Reference decoder written with scalar loops only: weight-normalized rows,
// ReLU between maps, input concatenation before the fifth map, tanh output.
inline double naive_decoder(const DecoderWeights& w, const VectorXd& z, const Vec3& x) {
  const int in0 = w.n_z + 3;
  std::vector<double> u(static_cast<std::size_t>(in0));
  for (int i = 0; i < w.n_z; ++i) u[static_cast<std::size_t>(i)] = z[i];
  for (int d = 0; d < 3; ++d) u[static_cast<std::size_t>(w.n_z + d)] = x[d];

  std::vector<double> act = u;
  for (int l = 0; l < 9; ++l) {
    if (l == 4) act.insert(act.end(), u.begin(), u.end());
    const WeightNormLayer& layer = w.layers[static_cast<std::size_t>(l)];
    std::vector<double> next(static_cast<std::size_t>(layer.fan_out()));
    for (int i = 0; i < layer.fan_out(); ++i) {
      double norm2 = 0.0;
      for (int j = 0; j < layer.fan_in(); ++j) norm2 += layer.V(i, j) * layer.V(i, j);
      const double norm = std::sqrt(norm2);
      const double s = norm > 0.0 ? layer.g[i] / norm : 0.0;
      double y = layer.b[i];
      for (int j = 0; j < layer.fan_in(); ++j) y += s * layer.V(i, j) * act[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = (l < 8 && y < 0.0) ? 0.0 : y;
    }
    act = std::move(next);
  }
  return std::tanh(act[0]);
}

inline std::vector<double> naive_objectnet(const ObjectNetWeights& w, const VectorXd& latent) {
  std::vector<double> act(static_cast<std::size_t>(latent.size()));
  for (int i = 0; i < latent.size(); ++i) act[static_cast<std::size_t>(i)] = latent[i];
  for (int l = 0; l < 4; ++l) {
    const WeightNormLayer& layer = w.layers[static_cast<std::size_t>(l)];
    std::vector<double> next(static_cast<std::size_t>(layer.fan_out()));
    for (int i = 0; i < layer.fan_out(); ++i) {
      double norm2 = 0.0;
      for (int j = 0; j < layer.fan_in(); ++j) norm2 += layer.V(i, j) * layer.V(i, j);
      const double norm = std::sqrt(norm2);
      const double s = norm > 0.0 ? layer.g[i] / norm : 0.0;
      double y = layer.b[i];
      for (int j = 0; j < layer.fan_in(); ++j) y += s * layer.V(i, j) * act[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = (l < 3 && y < 0.0) ? 0.0 : y;
    }
    act = std::move(next);
  }
  for (int p = 0; p < w.n_p; ++p) act[static_cast<std::size_t>(w.r_slot(p))] *= w.scale_multiplier;
  return act;
}

// Decoder with zero weights everywhere and a single output bias, so every
// covered query decodes to exactly tanh(bias).
inline DecoderWeights constant_decoder(int n_z, int hidden, double value) {
  DecoderWeights w;
  w.n_z = n_z;
  w.hidden = hidden;
  const int in0 = n_z + 3;
  for (int l = 0; l < 9; ++l) {
    const int fan_in = l == 0 ? in0 : (l == 4 ? hidden + in0 : hidden);
    const int fan_out = l == 8 ? 1 : hidden;
    w.layers[static_cast<std::size_t>(l)].V = MatrixXd::Zero(fan_out, fan_in);
    w.layers[static_cast<std::size_t>(l)].g = VectorXd::Zero(fan_out);
    w.layers[static_cast<std::size_t>(l)].b = VectorXd::Zero(fan_out);
  }
  w.layers[8].b[0] = std::atanh(value);
  return w;
}

inline ShapeCodes random_codes(int n_p, int n_z, Rng& rng) {
  ShapeCodes codes;
  for (int p = 0; p < n_p; ++p) {
    VectorXd z(n_z);
    for (int i = 0; i < n_z; ++i) z[i] = 0.3 * rng.normal();
    PatchExtrinsics e;
    e.c = 0.4 * rng.normal3();
    e.r = rng.uniform(0.3, 0.8);
    e.phi = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.2, 1.2), rng.uniform(-1.0, 1.0));
    codes.latents.push_back(z);
    codes.extrinsics.push_back(e);
  }
  return codes;
}

}  // namespace testsupport
