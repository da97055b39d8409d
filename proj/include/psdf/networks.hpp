#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "psdf/common.hpp"

namespace psdf {

// One fully-connected layer in the weight-normalized parametrization
// W = diag(g / rownorm(V)) * V. Rows of V with zero norm act as zero rows.
struct WeightNormLayer {
  MatrixXd V;  // fan_out x fan_in
  VectorXd g;
  VectorXd b;

  int fan_in() const { return static_cast<int>(V.cols()); }
  int fan_out() const { return static_cast<int>(V.rows()); }
  MatrixXd effective() const;
  void validate() const;
};

// Gradient transform from dL/dW to the (V, g) parametrization.
void weight_norm_grad(const WeightNormLayer& layer, const MatrixXd& dW, MatrixXd& dV,
                      VectorXd& dg);

// Patch-level SDF decoder: nine weight-normalized linear maps, ReLU between
// them, skip concatenation of the input at the fifth map, tanh on the scalar
// output. Input columns are [z; x_local].
struct DecoderWeights {
  int n_z = 128;
  int hidden = 128;
  std::array<WeightNormLayer, 9> layers;

  int input_dim() const { return n_z + 3; }
  void validate() const;
};

struct DecoderBatchCache {
  MatrixXd input;
  std::array<MatrixXd, 9> pre;
  std::array<MatrixXd, 9> W;
  Eigen::RowVectorXd y;
};

struct DecoderGrads {
  std::array<MatrixXd, 9> V;
  std::array<VectorXd, 9> g;
  std::array<VectorXd, 9> b;

  static DecoderGrads zeros_like(const DecoderWeights& w);
  DecoderGrads& operator+=(const DecoderGrads& other);
  DecoderGrads& operator*=(double s);
  bool all_finite() const;
};

// Forward pass over a batch; columns of `input` are [z; x_local]. When `cache`
// is non-null it is filled for a subsequent backward pass.
Eigen::RowVectorXd decoder_forward_batch(const DecoderWeights& w, const MatrixXd& input,
                                         DecoderBatchCache* cache = nullptr);

double decoder_forward(const DecoderWeights& w, const VectorXd& z, const Vec3& x_local);

// Reverse-mode gradients of sum_k upstream[k] * y[k]. Returns dL/dinput with
// the same layout as the forward input; the caller splits rows into dz and dx.
MatrixXd decoder_backward_batch(const DecoderWeights& w, const DecoderBatchCache& cache,
                                const Eigen::RowVectorXd& upstream, DecoderGrads& grads);

// Object-level regressor: four weight-normalized maps, ReLU on the three
// hidden maps, linear output of N_P blocks [z (N_z), c (3), r (1), phi (3)].
// scale_multiplier rescales every r slot in the forward pass.
struct ObjectNetWeights {
  int n_z = 128;
  int n_p = 30;
  int latent_dim = 256;
  int hidden = 1024;
  double scale_multiplier = 1.0;
  std::array<WeightNormLayer, 4> layers;

  int output_dim() const { return n_p * (n_z + 7); }
  int block_size() const { return n_z + 7; }
  int r_slot(int patch) const { return patch * block_size() + n_z + 3; }
  void validate() const;
};

struct ObjectNetBatchCache {
  MatrixXd input;
  std::array<MatrixXd, 4> pre;
  std::array<MatrixXd, 4> W;
};

struct ObjectNetGrads {
  std::array<MatrixXd, 4> V;
  std::array<VectorXd, 4> g;
  std::array<VectorXd, 4> b;

  static ObjectNetGrads zeros_like(const ObjectNetWeights& w);
  ObjectNetGrads& operator+=(const ObjectNetGrads& other);
  ObjectNetGrads& operator*=(double s);
  bool all_finite() const;
};

MatrixXd objectnet_forward_batch(const ObjectNetWeights& w, const MatrixXd& latents,
                                 ObjectNetBatchCache* cache = nullptr);

VectorXd objectnet_forward(const ObjectNetWeights& w, const VectorXd& latent);

// Returns dL/dlatents (latent_dim x B).
MatrixXd objectnet_backward_batch(const ObjectNetWeights& w, const ObjectNetBatchCache& cache,
                                  const MatrixXd& upstream, ObjectNetGrads& grads);

DecoderWeights init_decoder_weights(int n_z, int hidden, std::uint64_t seed);
ObjectNetWeights init_objectnet_weights(int latent_dim, int hidden, int n_p, int n_z,
                                        std::uint64_t seed);

// Adam with one independent moment/step slot per named tensor. Slots are
// created on first use, so out-of-batch tensors simply keep their state
// (lazy update, per-tensor bias correction).
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::string& name, Eigen::Ref<MatrixXd> param,
            const Eigen::Ref<const MatrixXd>& grad, double lr);
  std::int64_t steps(const std::string& name) const;
  void reset() { slots_.clear(); }

  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

 private:
  struct Slot {
    VectorXd m, v;
    std::int64_t t = 0;
  };
  std::map<std::string, Slot> slots_;
  double beta1_, beta2_, eps_;
};

}  // namespace psdf
