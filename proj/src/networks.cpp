#include "psdf/networks.hpp"

namespace psdf {

namespace {

VectorXd safe_row_scales(const WeightNormLayer& layer) {
  VectorXd scale(layer.fan_out());
  for (int i = 0; i < layer.fan_out(); ++i) {
    const double norm = layer.V.row(i).norm();
    scale[i] = norm > 0.0 ? layer.g[i] / norm : 0.0;
  }
  return scale;
}

}  // namespace

MatrixXd WeightNormLayer::effective() const {
  return safe_row_scales(*this).asDiagonal() * V;
}

void WeightNormLayer::validate() const {
  require(g.size() == V.rows() && b.size() == V.rows(), Errc::contract_violation,
          "weight-norm layer shape mismatch");
  require(V.allFinite() && g.allFinite() && b.allFinite(), Errc::numeric_error,
          "non-finite layer parameters");
}

void weight_norm_grad(const WeightNormLayer& layer, const MatrixXd& dW, MatrixXd& dV,
                      VectorXd& dg) {
  require(dW.rows() == layer.V.rows() && dW.cols() == layer.V.cols(), Errc::contract_violation,
          "weight gradient shape mismatch");
  dV.resize(layer.V.rows(), layer.V.cols());
  dg.resize(layer.V.rows());
  for (int i = 0; i < layer.fan_out(); ++i) {
    const double norm = layer.V.row(i).norm();
    if (norm <= 0.0) {
      dV.row(i).setZero();
      dg[i] = 0.0;
      continue;
    }
    const Eigen::RowVectorXd unit = layer.V.row(i) / norm;
    const double along = dW.row(i).dot(unit);
    dg[i] = along;
    dV.row(i) = (layer.g[i] / norm) * (dW.row(i) - along * unit);
  }
}

void DecoderWeights::validate() const {
  require(n_z >= 1 && hidden >= 1, Errc::contract_violation, "decoder dims must be positive");
  const int in0 = input_dim();
  for (int l = 0; l < 9; ++l) {
    const auto& layer = layers[static_cast<std::size_t>(l)];
    layer.validate();
    const int expect_in = l == 0 ? in0 : (l == 4 ? hidden + in0 : hidden);
    const int expect_out = l == 8 ? 1 : hidden;
    require(layer.fan_in() == expect_in && layer.fan_out() == expect_out,
            Errc::contract_violation,
            "decoder layer " + std::to_string(l + 1) + " has wrong shape");
  }
}

Eigen::RowVectorXd decoder_forward_batch(const DecoderWeights& w, const MatrixXd& input,
                                         DecoderBatchCache* cache) {
  require(input.rows() == w.input_dim(), Errc::contract_violation,
          "decoder input rows != N_z + 3");
  const auto cols = input.cols();
  DecoderBatchCache local;
  DecoderBatchCache& c = cache ? *cache : local;
  c.input = input;
  MatrixXd act = input;
  for (int l = 0; l < 9; ++l) {
    c.W[static_cast<std::size_t>(l)] = w.layers[static_cast<std::size_t>(l)].effective();
    if (l == 4) {
      MatrixXd joined(act.rows() + input.rows(), cols);
      joined << act, input;
      act = std::move(joined);
    }
    c.pre[static_cast<std::size_t>(l)].noalias() = c.W[static_cast<std::size_t>(l)] * act;
    c.pre[static_cast<std::size_t>(l)].colwise() += w.layers[static_cast<std::size_t>(l)].b;
    if (l < 8) {
      act = c.pre[static_cast<std::size_t>(l)].cwiseMax(0.0);
    }
  }
  c.y = c.pre[8].row(0).array().tanh();
  return c.y;
}

double decoder_forward(const DecoderWeights& w, const VectorXd& z, const Vec3& x_local) {
  require(z.size() == w.n_z, Errc::contract_violation, "latent length != N_z");
  MatrixXd input(w.input_dim(), 1);
  input.topRows(w.n_z) = z;
  input.bottomRows(3) = x_local;
  return decoder_forward_batch(w, input)(0);
}

DecoderGrads DecoderGrads::zeros_like(const DecoderWeights& w) {
  DecoderGrads g;
  for (int l = 0; l < 9; ++l) {
    const auto& layer = w.layers[static_cast<std::size_t>(l)];
    g.V[static_cast<std::size_t>(l)] = MatrixXd::Zero(layer.fan_out(), layer.fan_in());
    g.g[static_cast<std::size_t>(l)] = VectorXd::Zero(layer.fan_out());
    g.b[static_cast<std::size_t>(l)] = VectorXd::Zero(layer.fan_out());
  }
  return g;
}

DecoderGrads& DecoderGrads::operator+=(const DecoderGrads& other) {
  for (int l = 0; l < 9; ++l) {
    V[static_cast<std::size_t>(l)] += other.V[static_cast<std::size_t>(l)];
    g[static_cast<std::size_t>(l)] += other.g[static_cast<std::size_t>(l)];
    b[static_cast<std::size_t>(l)] += other.b[static_cast<std::size_t>(l)];
  }
  return *this;
}

DecoderGrads& DecoderGrads::operator*=(double s) {
  for (int l = 0; l < 9; ++l) {
    V[static_cast<std::size_t>(l)] *= s;
    g[static_cast<std::size_t>(l)] *= s;
    b[static_cast<std::size_t>(l)] *= s;
  }
  return *this;
}

bool DecoderGrads::all_finite() const {
  for (int l = 0; l < 9; ++l) {
    if (!V[static_cast<std::size_t>(l)].allFinite() ||
        !g[static_cast<std::size_t>(l)].allFinite() ||
        !b[static_cast<std::size_t>(l)].allFinite()) {
      return false;
    }
  }
  return true;
}

MatrixXd decoder_backward_batch(const DecoderWeights& w, const DecoderBatchCache& cache,
                                const Eigen::RowVectorXd& upstream, DecoderGrads& grads) {
  require(upstream.size() == cache.y.size(), Errc::contract_violation,
          "upstream size != batch size");
  const auto cols = cache.input.cols();
  const int in0 = w.input_dim();

  // d/dpre9 of tanh.
  MatrixXd dpre = (upstream.array() * (1.0 - cache.y.array().square())).matrix();

  MatrixXd dact;  // gradient wrt the input of the current layer
  MatrixXd dskip = MatrixXd::Zero(in0, cols);
  for (int l = 8; l >= 0; --l) {
    const std::size_t li = static_cast<std::size_t>(l);
    // Input to layer l as seen in the forward pass.
    MatrixXd layer_input;
    if (l == 0) {
      layer_input = cache.input;
    } else {
      layer_input = cache.pre[li - 1].cwiseMax(0.0);
      if (l == 4) {
        MatrixXd joined(layer_input.rows() + in0, cols);
        joined << layer_input, cache.input;
        layer_input = std::move(joined);
      }
    }

    MatrixXd dW;
    dW.noalias() = dpre * layer_input.transpose();
    weight_norm_grad(w.layers[li], dW, grads.V[li], grads.g[li]);
    grads.b[li] = dpre.rowwise().sum();
    dact.noalias() = cache.W[li].transpose() * dpre;

    if (l == 4) {
      dskip += dact.bottomRows(in0);
      dact = dact.topRows(w.hidden).eval();
    }
    if (l > 0) {
      dpre = (dact.array() * (cache.pre[li - 1].array() > 0.0).cast<double>()).matrix();
    }
  }
  return dact + dskip;
}

void ObjectNetWeights::validate() const {
  require(n_z >= 1 && n_p >= 1 && latent_dim >= 1 && hidden >= 1, Errc::contract_violation,
          "objectnet dims must be positive");
  require(scale_multiplier > 0.0, Errc::contract_violation,
          "scale multiplier must be positive");
  for (int l = 0; l < 4; ++l) {
    const auto& layer = layers[static_cast<std::size_t>(l)];
    layer.validate();
    const int expect_in = l == 0 ? latent_dim : hidden;
    const int expect_out = l == 3 ? output_dim() : hidden;
    require(layer.fan_in() == expect_in && layer.fan_out() == expect_out,
            Errc::contract_violation,
            "objectnet layer " + std::to_string(l + 1) + " has wrong shape");
  }
}

MatrixXd objectnet_forward_batch(const ObjectNetWeights& w, const MatrixXd& latents,
                                 ObjectNetBatchCache* cache) {
  require(latents.rows() == w.latent_dim, Errc::contract_violation,
          "object latent rows != latent_dim");
  ObjectNetBatchCache local;
  ObjectNetBatchCache& c = cache ? *cache : local;
  c.input = latents;
  MatrixXd act = latents;
  for (int l = 0; l < 4; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    c.W[li] = w.layers[li].effective();
    c.pre[li].noalias() = c.W[li] * act;
    c.pre[li].colwise() += w.layers[li].b;
    if (l < 3) act = c.pre[li].cwiseMax(0.0);
  }
  MatrixXd out = c.pre[3];
  for (int p = 0; p < w.n_p; ++p) out.row(w.r_slot(p)) *= w.scale_multiplier;
  return out;
}

VectorXd objectnet_forward(const ObjectNetWeights& w, const VectorXd& latent) {
  return objectnet_forward_batch(w, latent);
}

ObjectNetGrads ObjectNetGrads::zeros_like(const ObjectNetWeights& w) {
  ObjectNetGrads g;
  for (int l = 0; l < 4; ++l) {
    const auto& layer = w.layers[static_cast<std::size_t>(l)];
    g.V[static_cast<std::size_t>(l)] = MatrixXd::Zero(layer.fan_out(), layer.fan_in());
    g.g[static_cast<std::size_t>(l)] = VectorXd::Zero(layer.fan_out());
    g.b[static_cast<std::size_t>(l)] = VectorXd::Zero(layer.fan_out());
  }
  return g;
}

ObjectNetGrads& ObjectNetGrads::operator+=(const ObjectNetGrads& other) {
  for (int l = 0; l < 4; ++l) {
    V[static_cast<std::size_t>(l)] += other.V[static_cast<std::size_t>(l)];
    g[static_cast<std::size_t>(l)] += other.g[static_cast<std::size_t>(l)];
    b[static_cast<std::size_t>(l)] += other.b[static_cast<std::size_t>(l)];
  }
  return *this;
}

ObjectNetGrads& ObjectNetGrads::operator*=(double s) {
  for (int l = 0; l < 4; ++l) {
    V[static_cast<std::size_t>(l)] *= s;
    g[static_cast<std::size_t>(l)] *= s;
    b[static_cast<std::size_t>(l)] *= s;
  }
  return *this;
}

bool ObjectNetGrads::all_finite() const {
  for (int l = 0; l < 4; ++l) {
    if (!V[static_cast<std::size_t>(l)].allFinite() ||
        !g[static_cast<std::size_t>(l)].allFinite() ||
        !b[static_cast<std::size_t>(l)].allFinite()) {
      return false;
    }
  }
  return true;
}

MatrixXd objectnet_backward_batch(const ObjectNetWeights& w, const ObjectNetBatchCache& cache,
                                  const MatrixXd& upstream, ObjectNetGrads& grads) {
  require(upstream.rows() == w.output_dim() && upstream.cols() == cache.input.cols(),
          Errc::contract_violation, "objectnet upstream shape mismatch");
  MatrixXd dpre = upstream;
  for (int p = 0; p < w.n_p; ++p) dpre.row(w.r_slot(p)) *= w.scale_multiplier;

  MatrixXd dact;
  for (int l = 3; l >= 0; --l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const MatrixXd layer_input =
        l == 0 ? cache.input : MatrixXd(cache.pre[li - 1].cwiseMax(0.0));
    MatrixXd dW;
    dW.noalias() = dpre * layer_input.transpose();
    weight_norm_grad(w.layers[li], dW, grads.V[li], grads.g[li]);
    grads.b[li] = dpre.rowwise().sum();
    dact.noalias() = cache.W[li].transpose() * dpre;
    if (l > 0) {
      dpre = (dact.array() * (cache.pre[li - 1].array() > 0.0).cast<double>()).matrix();
    }
  }
  return dact;
}

namespace {

WeightNormLayer init_layer(int fan_out, int fan_in, Rng& rng) {
  WeightNormLayer layer;
  layer.V.resize(fan_out, fan_in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int i = 0; i < fan_out; ++i) {
    for (int j = 0; j < fan_in; ++j) layer.V(i, j) = rng.uniform(-bound, bound);
  }
  layer.g.resize(fan_out);
  for (int i = 0; i < fan_out; ++i) layer.g[i] = layer.V.row(i).norm();
  layer.b = VectorXd::Zero(fan_out);
  return layer;
}

}  // namespace

DecoderWeights init_decoder_weights(int n_z, int hidden, std::uint64_t seed) {
  DecoderWeights w;
  w.n_z = n_z;
  w.hidden = hidden;
  Rng rng(seed);
  const int in0 = w.input_dim();
  for (int l = 0; l < 9; ++l) {
    const int fan_in = l == 0 ? in0 : (l == 4 ? hidden + in0 : hidden);
    const int fan_out = l == 8 ? 1 : hidden;
    w.layers[static_cast<std::size_t>(l)] = init_layer(fan_out, fan_in, rng);
  }
  w.validate();
  return w;
}

ObjectNetWeights init_objectnet_weights(int latent_dim, int hidden, int n_p, int n_z,
                                        std::uint64_t seed) {
  ObjectNetWeights w;
  w.latent_dim = latent_dim;
  w.hidden = hidden;
  w.n_p = n_p;
  w.n_z = n_z;
  Rng rng(seed);
  for (int l = 0; l < 4; ++l) {
    const int fan_in = l == 0 ? latent_dim : hidden;
    const int fan_out = l == 3 ? w.output_dim() : hidden;
    w.layers[static_cast<std::size_t>(l)] = init_layer(fan_out, fan_in, rng);
  }
  // Output layer starts near zero so early outputs are bias-dominated; the
  // bias itself is filled in with template extrinsics by the training stage.
  auto& last = w.layers[3];
  last.V *= 1e-4;
  for (int i = 0; i < last.fan_out(); ++i) last.g[i] = last.V.row(i).norm();
  w.validate();
  return w;
}

void Adam::step(const std::string& name, Eigen::Ref<MatrixXd> param,
                const Eigen::Ref<const MatrixXd>& grad, double lr) {
  require(param.rows() == grad.rows() && param.cols() == grad.cols(), Errc::contract_violation,
          "adam shape mismatch for " + name);
  require(grad.allFinite(), Errc::numeric_error, "non-finite gradient for " + name);
  const auto n = param.size();
  Slot& slot = slots_[name];
  if (slot.m.size() == 0) {
    slot.m = VectorXd::Zero(n);
    slot.v = VectorXd::Zero(n);
  }
  require(slot.m.size() == n, Errc::contract_violation, "adam slot size changed for " + name);
  slot.t += 1;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.t));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.t));
  for (Eigen::Index k = 0; k < n; ++k) {
    const double gk = grad(k % grad.rows(), k / grad.rows());
    double& m = slot.m[k];
    double& v = slot.v[k];
    m = beta1_ * m + (1.0 - beta1_) * gk;
    v = beta2_ * v + (1.0 - beta2_) * gk * gk;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param(k % param.rows(), k / param.rows()) -= lr * mhat / (std::sqrt(vhat) + eps_);
  }
}

std::int64_t Adam::steps(const std::string& name) const {
  const auto it = slots_.find(name);
  return it == slots_.end() ? 0 : it->second.t;
}

}  // namespace psdf
