#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "psdf/checkpoint.hpp"
#include "psdf/losses.hpp"

namespace psdf {

struct TrainConfig {
  int n_patches = 30;
  int latent_size = 128;
  int hidden = 128;
  int epochs = 1000;
  double lr_net = 5e-4;
  double lr_codes = 1e-3;
  int lr_halving_period = 200;
  int batch_size = 64;
  int samples_per_object = 3000;
  LossWeights weights;  // weights.reg is the ramp target
  int reg_ramp_epochs = 400;
  std::uint64_t seed = 0;
  bool fixed_extrinsics = false;
  bool mixture_recon = false;
  bool baseline_mode = false;

  // Object-level regressor stage.
  int objectnet_latent = 256;
  int objectnet_hidden = 1024;
  int objectnet_batch_size = 128;
  int phase_epochs = 1000;
  double phase2_scale = 1.3;
  double tether_position_weight = 3.0;
  double tether_scale_weight = 30.0;

  void validate() const;
};

TrainConfig train_config_from_json_text(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string train_config_to_json_text(const TrainConfig& cfg);
void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path);
std::uint64_t config_hash(const TrainConfig& cfg);

double lr_at_epoch(double lr0, int epoch, int halving_period);
double omega_reg_at_epoch(double target, int epoch, int ramp_epochs);

struct ObjectData {
  SdfSampleSet samples;
  SurfaceSamples surface;
};

struct EpochStats {
  int epoch = 0;
  double lr_net = 0.0;
  double lr_codes = 0.0;
  double omega_reg = 0.0;
  LossReport report;  // mean over objects seen this epoch
};

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);
std::vector<EpochStats> read_history_csv(const std::filesystem::path& path);

struct TrainedModel {
  DecoderWeights decoder;
  std::vector<ShapeCodes> codes;
  TrainConfig config;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats& stats, const DecoderWeights& decoder,
                                         const std::vector<ShapeCodes>& codes)>;

TrainedModel train_patchnet(const std::vector<ObjectData>& dataset, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = nullptr);

// Test-time fitting: decoder stays bit-identical, only codes move.
ShapeCodes fit_shape(const DecoderWeights& decoder, const SdfSampleSet& samples,
                     const SurfaceSamples& surface, const TrainConfig& cfg,
                     std::vector<EpochStats>* history = nullptr);

struct ObjectNetModel {
  ObjectNetWeights objectnet;
  std::vector<VectorXd> object_latents;
  std::vector<PatchExtrinsics> template_extrinsics;
  std::vector<EpochStats> history;
};

using ObjectNetCallback = std::function<void(const EpochStats& stats, const ObjectNetModel& model)>;

ObjectNetModel train_objectnet(const DecoderWeights& decoder,
                               const std::vector<ObjectData>& dataset, const TrainConfig& cfg,
                               const ObjectNetCallback& on_epoch = nullptr);

// Layout of the regressor output: per patch [z (N_z), c (3), r (1), phi (3)].
ShapeCodes unpack_codes(const VectorXd& out, int n_p, int n_z);
VectorXd pack_code_grads(const CodeGrads& grads, int n_p, int n_z);

}  // namespace psdf
