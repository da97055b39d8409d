#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "psdf/checkpoint.hpp"
#include "psdf/mesh.hpp"
#include "psdf/sampling.hpp"
#include "psdf/training.hpp"

using namespace psdf;

namespace {

struct TempPath {
  std::filesystem::path path;
  explicit TempPath(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("psdf_unit_" + name);
  }
  ~TempPath() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

std::vector<ObjectData> tiny_dataset(int n_objects, int n_samples, std::uint64_t seed) {
  std::vector<ObjectData> data;
  for (int i = 0; i < n_objects; ++i) {
    const TriMesh mesh = make_icosphere(2, 0.6 + 0.1 * i);
    ObjectData obj;
    obj.samples = sample_sdf_set(mesh, n_samples, 0.1, seed + static_cast<std::uint64_t>(i));
    obj.surface = sample_surface(mesh, n_samples / 2, seed + 100 + static_cast<std::uint64_t>(i));
    data.push_back(std::move(obj));
  }
  return data;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.n_patches = 3;
  cfg.latent_size = 6;
  cfg.hidden = 12;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.samples_per_object = 120;
  cfg.objectnet_latent = 8;
  cfg.objectnet_hidden = 16;
  cfg.objectnet_batch_size = 2;
  cfg.phase_epochs = 2;
  return cfg;
}

}  // namespace

TEST_CASE("learning rate halves on the fixed period") {
  CHECK(lr_at_epoch(1e-3, 0, 200) == 1e-3);
  CHECK(lr_at_epoch(1e-3, 199, 200) == 1e-3);
  CHECK(lr_at_epoch(1e-3, 200, 200) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_at_epoch(1e-3, 399, 200) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_at_epoch(1e-3, 400, 200) == doctest::Approx(2.5e-4).epsilon(1e-15));
  CHECK(lr_at_epoch(1e-3, 50, 50) == doctest::Approx(5e-4).epsilon(1e-15));
}

TEST_CASE("latent regularizer weight ramps linearly to its target") {
  CHECK(omega_reg_at_epoch(1e-4, 0, 400) == 0.0);
  CHECK(omega_reg_at_epoch(1e-4, 200, 400) == doctest::Approx(5e-5).epsilon(1e-15));
  CHECK(omega_reg_at_epoch(1e-4, 400, 400) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(omega_reg_at_epoch(1e-4, 1000, 400) == doctest::Approx(1e-4).epsilon(1e-15));
  double prev = -1.0;
  for (int e = 0; e <= 500; e += 25) {
    const double w = omega_reg_at_epoch(1e-4, e, 400);
    CHECK(w >= prev);
    prev = w;
  }
}

TEST_CASE("train config json round trip and validation") {
  TrainConfig cfg = tiny_config();
  cfg.weights.cov = 123.0;
  cfg.mixture_recon = true;
  const std::string text = train_config_to_json_text(cfg);
  const TrainConfig back = train_config_from_json_text(text);
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.weights.cov == 123.0);
  CHECK(back.mixture_recon);

  TrainConfig other = cfg;
  other.latent_size = 7;
  CHECK(config_hash(other) != config_hash(cfg));

  CHECK_THROWS_AS(train_config_from_json_text("not json"), Error);
  CHECK_THROWS_AS(train_config_from_json_text("{\"no_such_key\": 1}"), Error);
  TrainConfig bad = cfg;
  bad.epochs = 0;  // zero-epoch runs are legal (checkpoint without training)
  CHECK_NOTHROW(bad.validate());
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.n_patches = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("history csv round trips every column") {
  std::vector<EpochStats> history(2);
  history[0].epoch = 0;
  history[0].lr_net = 5e-4;
  history[0].lr_codes = 1e-3;
  history[0].omega_reg = 0.0;
  history[0].report.total = 1.5;
  history[0].report.recon = 0.25;
  history[0].report.sur = 0.3;
  history[0].report.cov = 0.5;
  history[0].report.rot = 0.125;
  history[0].report.scl = 0.0625;
  history[0].report.var = 0.03125;
  history[0].report.reg = 0.015625;
  history[0].report.free_space = 0.2;
  history[0].report.tether = 0.015625;
  history[1] = history[0];
  history[1].epoch = 1;
  history[1].report.total = 0.75;

  TempPath tmp("history.csv");
  write_history_csv(history, tmp.path);
  const auto back = read_history_csv(tmp.path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].epoch == 0);
  CHECK(back[1].epoch == 1);
  CHECK(back[0].lr_net == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(back[0].report.total == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(back[0].report.tether == doctest::Approx(0.015625).epsilon(1e-12));
  CHECK(back[1].report.total == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS(read_history_csv("/nonexistent.csv"), Error);
}

TEST_CASE("patch training runs, logs every epoch, and is seed-deterministic") {
  const auto data = tiny_dataset(2, 300, 5);
  const TrainConfig cfg = tiny_config();

  int callbacks = 0;
  const TrainedModel model = train_patchnet(data, cfg, [&](const EpochStats& stats,
                                                           const DecoderWeights&,
                                                           const std::vector<ShapeCodes>&) {
    CHECK(stats.epoch == callbacks);
    ++callbacks;
  });
  CHECK(callbacks == cfg.epochs);
  REQUIRE(static_cast<int>(model.history.size()) == cfg.epochs);
  REQUIRE(model.codes.size() == data.size());
  model.decoder.validate();
  for (const ShapeCodes& codes : model.codes) {
    CHECK(codes.n_patches() == cfg.n_patches);
    codes.validate(cfg.latent_size);
    for (const PatchExtrinsics& e : codes.extrinsics) CHECK(e.r >= kRadiusMin);
  }
  for (const EpochStats& s : model.history) {
    CHECK(std::isfinite(s.report.total));
    CHECK(s.lr_net == lr_at_epoch(cfg.lr_net, s.epoch, cfg.lr_halving_period));
    CHECK(s.omega_reg == omega_reg_at_epoch(cfg.weights.reg, s.epoch, cfg.reg_ramp_epochs));
  }

  const TrainedModel again = train_patchnet(data, cfg);
  CHECK(decoder_checksum(again.decoder) == decoder_checksum(model.decoder));
  CHECK(again.history.back().report.total == model.history.back().report.total);
}

TEST_CASE("baseline mode uses one fat patch with frozen identity extrinsics") {
  const auto data = tiny_dataset(1, 200, 6);
  TrainConfig cfg = tiny_config();
  cfg.baseline_mode = true;
  const TrainedModel model = train_patchnet(data, cfg);
  REQUIRE(model.codes.size() == 1);
  CHECK(model.codes[0].n_patches() == 1);
  CHECK(model.codes[0].latents[0].size() == cfg.n_patches * (cfg.latent_size + 7));
  const PatchExtrinsics& e = model.codes[0].extrinsics[0];
  CHECK(e.c.norm() == 0.0);
  CHECK(e.r == 1.0);
  CHECK(e.phi.norm() == 0.0);
}

TEST_CASE("fixed extrinsics stay pinned at their initialization") {
  const auto data = tiny_dataset(1, 200, 7);
  TrainConfig cfg = tiny_config();
  cfg.fixed_extrinsics = true;
  const TrainedModel model = train_patchnet(data, cfg);
  TrainConfig longer = cfg;
  longer.epochs = cfg.epochs + 2;
  const TrainedModel later = train_patchnet(data, longer);
  // Extrinsics never move, so any two run lengths agree bitwise.
  REQUIRE(later.codes[0].extrinsics.size() == model.codes[0].extrinsics.size());
  bool latents_moved = false;
  for (std::size_t p = 0; p < model.codes[0].extrinsics.size(); ++p) {
    CHECK((later.codes[0].extrinsics[p].c - model.codes[0].extrinsics[p].c).norm() == 0.0);
    CHECK(later.codes[0].extrinsics[p].r == model.codes[0].extrinsics[p].r);
    CHECK((later.codes[0].extrinsics[p].phi - model.codes[0].extrinsics[p].phi).norm() == 0.0);
    latents_moved = latents_moved ||
                    (later.codes[0].latents[p] - model.codes[0].latents[p]).norm() > 0.0;
  }
  CHECK(latents_moved);
}

TEST_CASE("fit_shape never touches the decoder") {
  const auto data = tiny_dataset(2, 300, 8);
  const TrainConfig cfg = tiny_config();
  const TrainedModel model = train_patchnet(data, cfg);
  const std::uint64_t before = decoder_checksum(model.decoder);

  std::vector<EpochStats> history;
  const ShapeCodes fitted = fit_shape(model.decoder, data[1].samples, data[1].surface, cfg, &history);
  CHECK(decoder_checksum(model.decoder) == before);
  CHECK(static_cast<int>(history.size()) == cfg.epochs);
  CHECK(fitted.n_patches() == cfg.n_patches);
  CHECK(std::isfinite(history.back().report.total));
}

TEST_CASE("object regressor training freezes the decoder and runs three phases") {
  const auto data = tiny_dataset(2, 300, 9);
  TrainConfig cfg = tiny_config();
  const TrainedModel model = train_patchnet(data, cfg);
  const std::uint64_t frozen = decoder_checksum(model.decoder);

  const ObjectNetModel onet = train_objectnet(model.decoder, data, cfg);
  CHECK(decoder_checksum(model.decoder) == frozen);
  CHECK(static_cast<int>(onet.history.size()) == 3 * cfg.phase_epochs);
  CHECK(onet.objectnet.scale_multiplier == doctest::Approx(cfg.phase2_scale));
  CHECK(onet.object_latents.size() == data.size());
  CHECK(static_cast<int>(onet.template_extrinsics.size()) == cfg.n_patches);
  for (const VectorXd& z : onet.object_latents) CHECK(z.size() == cfg.objectnet_latent);
  onet.objectnet.validate();

  // Epochs run continuously across phases; the final phase drops both rates 5x.
  for (std::size_t i = 0; i < onet.history.size(); ++i)
    CHECK(onet.history[i].epoch == static_cast<int>(i));
  CHECK(onet.history.front().lr_net == cfg.lr_net);
  CHECK(onet.history[static_cast<std::size_t>(2 * cfg.phase_epochs)].lr_net ==
        doctest::Approx(cfg.lr_net / 5.0).epsilon(1e-15));
}
