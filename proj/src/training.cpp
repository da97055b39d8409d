#include "psdf/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>

#include "json.hpp"

namespace psdf {

namespace {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0, std::uint64_t d = 0) {
  const std::array<std::uint64_t, 5> words{seed, a, b, c, d};
  std::uint64_t state = fnv1a64(words.data(), sizeof(words));
  return splitmix64(state);
}

constexpr std::uint64_t kSeedDecoderInit = 1;
constexpr std::uint64_t kSeedExtInit = 2;
constexpr std::uint64_t kSeedShuffle = 3;
constexpr std::uint64_t kSeedDraw = 4;
constexpr std::uint64_t kSeedTemplatePick = 5;
constexpr std::uint64_t kSeedTemplateInit = 6;
constexpr std::uint64_t kSeedRegressorInit = 7;

SdfSampleSet draw_minibatch(const SdfSampleSet& pool, int count, Rng& rng) {
  SdfSampleSet out;
  out.truncation = pool.truncation;
  out.points.resize(static_cast<std::size_t>(count));
  out.sdf.resize(static_cast<std::size_t>(count));
  const auto n = static_cast<std::uint64_t>(pool.size());
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_index(n));
    out.points[static_cast<std::size_t>(i)] = pool.points[j];
    out.sdf[static_cast<std::size_t>(i)] = pool.sdf[j];
  }
  return out;
}

std::vector<PatchExtrinsics> identity_extrinsics(int n_patches) {
  std::vector<PatchExtrinsics> ext(static_cast<std::size_t>(n_patches));
  return ext;
}

void apply_code_step(Adam& opt_codes, Adam& opt_ext, ShapeCodes& codes, const CodeGrads& cg,
                     int object, double lr, bool freeze_ext) {
  for (int p = 0; p < codes.n_patches(); ++p) {
    const auto sp = static_cast<std::size_t>(p);
    const std::string tag = "o" + std::to_string(object) + ".p" + std::to_string(p);
    opt_codes.step(tag + ".z", codes.latents[sp], cg.dz[sp], lr);
    if (freeze_ext) continue;
    auto& e = codes.extrinsics[sp];
    VectorXd param(7), grad(7);
    param << e.r, e.c, e.phi;
    grad << cg.dr[sp], cg.dc[sp], cg.dphi[sp];
    opt_ext.step(tag + ".e", param, grad, lr);
    e.r = std::max(param[0], kRadiusMin);
    e.c = param.segment<3>(1);
    e.phi = param.segment<3>(4);
  }
}

template <typename Weights, typename Grads>
void apply_layer_steps(Adam& opt, const std::string& prefix, Weights& w, const Grads& g,
                       double lr) {
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const std::string tag = prefix + std::to_string(l);
    opt.step(tag + ".V", w.layers[l].V, g.V[l], lr);
    opt.step(tag + ".g", w.layers[l].g, g.g[l], lr);
    opt.step(tag + ".b", w.layers[l].b, g.b[l], lr);
  }
}

void check_dataset(const std::vector<ObjectData>& dataset) {
  require(!dataset.empty(), Errc::bad_argument, "training needs at least one object");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    dataset[i].samples.validate();
    require(dataset[i].samples.size() > 0, Errc::bad_argument,
            "object " + std::to_string(i) + " has no SDF samples");
    require(dataset[i].surface.size() > 0, Errc::bad_argument,
            "object " + std::to_string(i) + " has no surface samples");
  }
}

[[noreturn]] void rethrow_with_context(const Error& err, const std::string& context) {
  fail(err.code(), context + ": " + err.what());
}

json weights_to_json(const LossWeights& lw) {
  return json{{"sur", lw.sur},       {"cov", lw.cov}, {"rot", lw.rot},
              {"scl", lw.scl},       {"var", lw.var}, {"reg", lw.reg},
              {"t", lw.t},           {"sigma_cov", lw.sigma_cov}};
}

void weights_from_json(const json& j, LossWeights& lw) {
  static const std::array<const char*, 8> known{"sur", "cov", "rot", "scl",
                                               "var", "reg", "t",   "sigma_cov"};
  for (const auto& item : j.items()) {
    require(std::find(known.begin(), known.end(), item.key()) != known.end(), Errc::parse_error,
            "unknown loss weight key: " + item.key());
  }
  if (j.contains("sur")) lw.sur = j.at("sur").get<double>();
  if (j.contains("cov")) lw.cov = j.at("cov").get<double>();
  if (j.contains("rot")) lw.rot = j.at("rot").get<double>();
  if (j.contains("scl")) lw.scl = j.at("scl").get<double>();
  if (j.contains("var")) lw.var = j.at("var").get<double>();
  if (j.contains("reg")) lw.reg = j.at("reg").get<double>();
  if (j.contains("t")) lw.t = j.at("t").get<double>();
  if (j.contains("sigma_cov")) lw.sigma_cov = j.at("sigma_cov").get<double>();
}

}  // namespace

void TrainConfig::validate() const {
  require(n_patches >= 1, Errc::bad_argument, "n_patches must be positive");
  require(latent_size >= 1, Errc::bad_argument, "latent_size must be positive");
  require(hidden >= 1, Errc::bad_argument, "hidden must be positive");
  require(epochs >= 0, Errc::bad_argument, "epochs must be nonnegative");
  require(lr_net > 0.0 && lr_codes > 0.0, Errc::bad_argument, "learning rates must be positive");
  require(lr_halving_period >= 1, Errc::bad_argument, "lr_halving_period must be positive");
  require(batch_size >= 1, Errc::bad_argument, "batch_size must be positive");
  require(samples_per_object >= 1, Errc::bad_argument, "samples_per_object must be positive");
  require(reg_ramp_epochs >= 0, Errc::bad_argument, "reg_ramp_epochs must be nonnegative");
  weights.validate();
  require(objectnet_latent >= 1 && objectnet_hidden >= 1, Errc::bad_argument,
          "regressor sizes must be positive");
  require(objectnet_batch_size >= 1, Errc::bad_argument, "objectnet_batch_size must be positive");
  require(phase_epochs >= 0, Errc::bad_argument, "phase_epochs must be nonnegative");
  require(phase2_scale > 0.0, Errc::bad_argument, "phase2_scale must be positive");
  require(tether_position_weight >= 0.0 && tether_scale_weight >= 0.0, Errc::bad_argument,
          "tether weights must be nonnegative");
}

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& ex) {
    fail(Errc::parse_error, std::string("config: ") + ex.what());
  }
  require(j.is_object(), Errc::parse_error, "config must be a JSON object");

  static const std::array<const char*, 22> known{
      "n_patches",        "latent_size",      "hidden",
      "epochs",           "lr_net",           "lr_codes",
      "lr_halving_period", "batch_size",      "samples_per_object",
      "weights",          "reg_ramp_epochs",  "seed",
      "fixed_extrinsics", "mixture_recon",    "baseline_mode",
      "objectnet_latent", "objectnet_hidden", "objectnet_batch_size",
      "phase_epochs",     "phase2_scale",     "tether_position_weight",
      "tether_scale_weight"};
  for (const auto& item : j.items()) {
    require(std::find(known.begin(), known.end(), item.key()) != known.end(), Errc::parse_error,
            "unknown config key: " + item.key());
  }

  TrainConfig cfg;
  try {
    if (j.contains("n_patches")) cfg.n_patches = j.at("n_patches").get<int>();
    if (j.contains("latent_size")) cfg.latent_size = j.at("latent_size").get<int>();
    if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<int>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("lr_net")) cfg.lr_net = j.at("lr_net").get<double>();
    if (j.contains("lr_codes")) cfg.lr_codes = j.at("lr_codes").get<double>();
    if (j.contains("lr_halving_period"))
      cfg.lr_halving_period = j.at("lr_halving_period").get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("samples_per_object"))
      cfg.samples_per_object = j.at("samples_per_object").get<int>();
    if (j.contains("weights")) weights_from_json(j.at("weights"), cfg.weights);
    if (j.contains("reg_ramp_epochs")) cfg.reg_ramp_epochs = j.at("reg_ramp_epochs").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("fixed_extrinsics")) cfg.fixed_extrinsics = j.at("fixed_extrinsics").get<bool>();
    if (j.contains("mixture_recon")) cfg.mixture_recon = j.at("mixture_recon").get<bool>();
    if (j.contains("baseline_mode")) cfg.baseline_mode = j.at("baseline_mode").get<bool>();
    if (j.contains("objectnet_latent")) cfg.objectnet_latent = j.at("objectnet_latent").get<int>();
    if (j.contains("objectnet_hidden")) cfg.objectnet_hidden = j.at("objectnet_hidden").get<int>();
    if (j.contains("objectnet_batch_size"))
      cfg.objectnet_batch_size = j.at("objectnet_batch_size").get<int>();
    if (j.contains("phase_epochs")) cfg.phase_epochs = j.at("phase_epochs").get<int>();
    if (j.contains("phase2_scale")) cfg.phase2_scale = j.at("phase2_scale").get<double>();
    if (j.contains("tether_position_weight"))
      cfg.tether_position_weight = j.at("tether_position_weight").get<double>();
    if (j.contains("tether_scale_weight"))
      cfg.tether_scale_weight = j.at("tether_scale_weight").get<double>();
  } catch (const json::exception& ex) {
    fail(Errc::parse_error, std::string("config: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return train_config_from_json_text(buffer.str());
}

std::string train_config_to_json_text(const TrainConfig& cfg) {
  json j{{"n_patches", cfg.n_patches},
         {"latent_size", cfg.latent_size},
         {"hidden", cfg.hidden},
         {"epochs", cfg.epochs},
         {"lr_net", cfg.lr_net},
         {"lr_codes", cfg.lr_codes},
         {"lr_halving_period", cfg.lr_halving_period},
         {"batch_size", cfg.batch_size},
         {"samples_per_object", cfg.samples_per_object},
         {"weights", weights_to_json(cfg.weights)},
         {"reg_ramp_epochs", cfg.reg_ramp_epochs},
         {"seed", cfg.seed},
         {"fixed_extrinsics", cfg.fixed_extrinsics},
         {"mixture_recon", cfg.mixture_recon},
         {"baseline_mode", cfg.baseline_mode},
         {"objectnet_latent", cfg.objectnet_latent},
         {"objectnet_hidden", cfg.objectnet_hidden},
         {"objectnet_batch_size", cfg.objectnet_batch_size},
         {"phase_epochs", cfg.phase_epochs},
         {"phase2_scale", cfg.phase2_scale},
         {"tether_position_weight", cfg.tether_position_weight},
         {"tether_scale_weight", cfg.tether_scale_weight}};
  return j.dump(2) + "\n";
}

void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), Errc::io_error, "cannot write " + path.string());
  out << train_config_to_json_text(cfg);
  out.flush();
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  const std::string text = train_config_to_json_text(cfg);
  return fnv1a64(text.data(), text.size());
}

double lr_at_epoch(double lr0, int epoch, int halving_period) {
  require(halving_period >= 1, Errc::bad_argument, "halving period must be positive");
  require(epoch >= 0, Errc::bad_argument, "epoch must be nonnegative");
  return lr0 * std::exp2(-static_cast<double>(epoch / halving_period));
}

double omega_reg_at_epoch(double target, int epoch, int ramp_epochs) {
  require(epoch >= 0, Errc::bad_argument, "epoch must be nonnegative");
  if (ramp_epochs <= 0) return target;
  const double f = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(ramp_epochs));
  return target * f;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), Errc::io_error, "cannot write " + path.string());
  out << "epoch,lr_net,lr_codes,omega_reg,total,recon,sur,cov,rot,scl,var,reg,free_space,tether\n";
  out << std::setprecision(17);
  for (const auto& row : history) {
    const auto& r = row.report;
    out << row.epoch << ',' << row.lr_net << ',' << row.lr_codes << ',' << row.omega_reg << ','
        << r.total << ',' << r.recon << ',' << r.sur << ',' << r.cov << ',' << r.rot << ','
        << r.scl << ',' << r.var << ',' << r.reg << ',' << r.free_space << ',' << r.tether
        << '\n';
  }
  out.flush();
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

std::vector<EpochStats> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::parse_error,
          "empty history file " + path.string());
  require(line ==
              "epoch,lr_net,lr_codes,omega_reg,total,recon,sur,cov,rot,scl,var,reg,free_space,"
              "tether",
          Errc::parse_error, "unexpected history header in " + path.string());
  std::vector<EpochStats> history;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::array<double, 14> cells{};
    std::string cell;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      require(static_cast<bool>(std::getline(ss, cell, ',')), Errc::parse_error,
              "short history row in " + path.string());
      try {
        cells[k] = std::stod(cell);
      } catch (const std::exception&) {
        fail(Errc::parse_error, "bad history cell '" + cell + "' in " + path.string());
      }
    }
    EpochStats row;
    row.epoch = static_cast<int>(cells[0]);
    row.lr_net = cells[1];
    row.lr_codes = cells[2];
    row.omega_reg = cells[3];
    row.report.total = cells[4];
    row.report.recon = cells[5];
    row.report.sur = cells[6];
    row.report.cov = cells[7];
    row.report.rot = cells[8];
    row.report.scl = cells[9];
    row.report.var = cells[10];
    row.report.reg = cells[11];
    row.report.free_space = cells[12];
    row.report.tether = cells[13];
    history.push_back(row);
  }
  return history;
}

TrainedModel train_patchnet(const std::vector<ObjectData>& dataset, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  check_dataset(dataset);
  const int n_objects = static_cast<int>(dataset.size());

  const bool baseline = cfg.baseline_mode;
  const int n_p = baseline ? 1 : cfg.n_patches;
  // The baseline gets the full patch parameter budget in one global code.
  const int n_z = baseline ? cfg.n_patches * (cfg.latent_size + 7) : cfg.latent_size;
  const bool freeze_ext = baseline || cfg.fixed_extrinsics;

  TrainedModel model;
  model.config = cfg;
  model.decoder = init_decoder_weights(n_z, cfg.hidden, derive_seed(cfg.seed, kSeedDecoderInit));

  model.codes.resize(dataset.size());
  std::vector<PointKdTree> trees;
  trees.reserve(dataset.size());
  for (int i = 0; i < n_objects; ++i) {
    const auto si = static_cast<std::size_t>(i);
    model.codes[si].latents.assign(static_cast<std::size_t>(n_p), VectorXd::Zero(n_z));
    model.codes[si].extrinsics =
        baseline ? identity_extrinsics(1)
                 : init_extrinsics(dataset[si].surface, n_p,
                                   derive_seed(cfg.seed, kSeedExtInit, static_cast<std::uint64_t>(i)));
    trees.emplace_back(dataset[si].surface.points);
  }

  LossWeights base_lw = cfg.weights;
  if (baseline) {
    base_lw.sur = base_lw.cov = base_lw.rot = base_lw.scl = base_lw.var = 0.0;
  }

  Adam opt_theta, opt_codes, opt_ext;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto ue = static_cast<std::uint64_t>(epoch);
    const double lr_net = lr_at_epoch(cfg.lr_net, epoch, cfg.lr_halving_period);
    const double lr_codes = lr_at_epoch(cfg.lr_codes, epoch, cfg.lr_halving_period);
    LossWeights lw = base_lw;
    lw.reg = omega_reg_at_epoch(cfg.weights.reg, epoch, cfg.reg_ramp_epochs);

    std::vector<int> order(static_cast<std::size_t>(n_objects));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, kSeedShuffle, ue));
    shuffle_rng.shuffle(order);

    LossReport epoch_report;
    for (int begin = 0; begin < n_objects; begin += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_objects - begin);
      DecoderGrads theta_sum = DecoderGrads::zeros_like(model.decoder);
      for (int bi = 0; bi < bsz; ++bi) {
        const int obj = order[static_cast<std::size_t>(begin + bi)];
        const auto so = static_cast<std::size_t>(obj);
        Rng draw_rng(derive_seed(cfg.seed, kSeedDraw, ue, static_cast<std::uint64_t>(obj)));
        const SdfSampleSet mini =
            draw_minibatch(dataset[so].samples, cfg.samples_per_object, draw_rng);
        CodeGrads cg = CodeGrads::zeros_like(model.codes[so]);
        DecoderGrads tg = DecoderGrads::zeros_like(model.decoder);
        LossReport rep;
        try {
          rep = loss_total(model.codes[so], model.decoder, mini, dataset[so].surface, trees[so],
                           lw, cfg.mixture_recon, nullptr, &cg, &tg);
        } catch (const Error& err) {
          rethrow_with_context(err, "epoch " + std::to_string(epoch) + ", object " +
                                        std::to_string(obj));
        }
        epoch_report += rep;
        theta_sum += tg;
        apply_code_step(opt_codes, opt_ext, model.codes[so], cg, obj, lr_codes, freeze_ext);
      }
      theta_sum *= 1.0 / static_cast<double>(bsz);
      apply_layer_steps(opt_theta, "L", model.decoder, theta_sum, lr_net);
    }
    epoch_report *= 1.0 / static_cast<double>(n_objects);
    model.history.push_back({epoch, lr_net, lr_codes, lw.reg, epoch_report});
    if (on_epoch) on_epoch(model.history.back(), model.decoder, model.codes);
  }
  return model;
}

ShapeCodes fit_shape(const DecoderWeights& decoder, const SdfSampleSet& samples,
                     const SurfaceSamples& surface, const TrainConfig& cfg,
                     std::vector<EpochStats>* history) {
  cfg.validate();
  decoder.validate();
  samples.validate();
  require(samples.size() > 0, Errc::bad_argument, "fitting needs SDF samples");
  require(surface.size() > 0, Errc::bad_argument, "fitting needs surface samples");

  const bool baseline = cfg.baseline_mode;
  const int n_p = baseline ? 1 : cfg.n_patches;
  const bool freeze_ext = baseline || cfg.fixed_extrinsics;
  const std::uint64_t digest_before = decoder_checksum(decoder);

  ShapeCodes codes;
  codes.latents.assign(static_cast<std::size_t>(n_p), VectorXd::Zero(decoder.n_z));
  codes.extrinsics = baseline ? identity_extrinsics(1)
                              : init_extrinsics(surface, n_p, derive_seed(cfg.seed, kSeedExtInit, 0));
  const PointKdTree tree(surface.points);

  LossWeights base_lw = cfg.weights;
  if (baseline) {
    base_lw.sur = base_lw.cov = base_lw.rot = base_lw.scl = base_lw.var = 0.0;
  }

  Adam opt_codes, opt_ext;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto ue = static_cast<std::uint64_t>(epoch);
    const double lr_codes = lr_at_epoch(cfg.lr_codes, epoch, cfg.lr_halving_period);
    LossWeights lw = base_lw;
    lw.reg = omega_reg_at_epoch(cfg.weights.reg, epoch, cfg.reg_ramp_epochs);

    Rng draw_rng(derive_seed(cfg.seed, kSeedDraw, ue, 0));
    const SdfSampleSet mini = draw_minibatch(samples, cfg.samples_per_object, draw_rng);
    CodeGrads cg = CodeGrads::zeros_like(codes);
    LossReport rep;
    try {
      rep = loss_total(codes, decoder, mini, surface, tree, lw, cfg.mixture_recon, nullptr, &cg,
                       nullptr);
    } catch (const Error& err) {
      rethrow_with_context(err, "fit epoch " + std::to_string(epoch));
    }
    apply_code_step(opt_codes, opt_ext, codes, cg, 0, lr_codes, freeze_ext);
    if (history) history->push_back({epoch, 0.0, lr_codes, lw.reg, rep});
  }

  require(decoder_checksum(decoder) == digest_before, Errc::contract_violation,
          "decoder changed during fitting");
  return codes;
}

ShapeCodes unpack_codes(const VectorXd& out, int n_p, int n_z) {
  const int block = n_z + 7;
  require(out.size() == static_cast<Eigen::Index>(n_p) * block, Errc::contract_violation,
          "regressor output length mismatch");
  ShapeCodes codes;
  codes.latents.resize(static_cast<std::size_t>(n_p));
  codes.extrinsics.resize(static_cast<std::size_t>(n_p));
  for (int p = 0; p < n_p; ++p) {
    const auto sp = static_cast<std::size_t>(p);
    const Eigen::Index off = static_cast<Eigen::Index>(p) * block;
    codes.latents[sp] = out.segment(off, n_z);
    auto& e = codes.extrinsics[sp];
    e.c = out.segment(off + n_z, 3);
    e.r = out[off + n_z + 3];
    e.phi = out.segment(off + n_z + 4, 3);
  }
  return codes;
}

VectorXd pack_code_grads(const CodeGrads& grads, int n_p, int n_z) {
  require(static_cast<int>(grads.dz.size()) == n_p, Errc::contract_violation,
          "gradient patch count mismatch");
  const int block = n_z + 7;
  VectorXd out = VectorXd::Zero(static_cast<Eigen::Index>(n_p) * block);
  for (int p = 0; p < n_p; ++p) {
    const auto sp = static_cast<std::size_t>(p);
    require(grads.dz[sp].size() == n_z, Errc::contract_violation, "gradient latent size mismatch");
    const Eigen::Index off = static_cast<Eigen::Index>(p) * block;
    out.segment(off, n_z) = grads.dz[sp];
    out.segment(off + n_z, 3) = grads.dc[sp];
    out[off + n_z + 3] = grads.dr[sp];
    out.segment(off + n_z + 4, 3) = grads.dphi[sp];
  }
  return out;
}

ObjectNetModel train_objectnet(const DecoderWeights& decoder,
                               const std::vector<ObjectData>& dataset, const TrainConfig& cfg,
                               const ObjectNetCallback& on_epoch) {
  cfg.validate();
  decoder.validate();
  check_dataset(dataset);
  const int n_objects = static_cast<int>(dataset.size());
  const int n_p = cfg.n_patches;
  const int n_z = decoder.n_z;
  const std::uint64_t decoder_digest = decoder_checksum(decoder);

  ObjectNetModel model;

  std::vector<int> pick(static_cast<std::size_t>(n_objects));
  std::iota(pick.begin(), pick.end(), 0);
  Rng pick_rng(derive_seed(cfg.seed, kSeedTemplatePick));
  pick_rng.shuffle(pick);
  model.template_extrinsics = init_extrinsics(dataset[static_cast<std::size_t>(pick[0])].surface,
                                              n_p, derive_seed(cfg.seed, kSeedTemplateInit));

  model.objectnet = init_objectnet_weights(cfg.objectnet_latent, cfg.objectnet_hidden, n_p, n_z,
                                           derive_seed(cfg.seed, kSeedRegressorInit));
  {
    auto& bias = model.objectnet.layers.back().b;
    for (int p = 0; p < n_p; ++p) {
      const auto& e = model.template_extrinsics[static_cast<std::size_t>(p)];
      const Eigen::Index off = static_cast<Eigen::Index>(p) * model.objectnet.block_size();
      bias.segment(off + n_z, 3) = e.c;
      bias[off + n_z + 3] = e.r;
      bias.segment(off + n_z + 4, 3) = e.phi;
    }
  }
  model.object_latents.assign(dataset.size(), VectorXd::Zero(cfg.objectnet_latent));

  std::vector<PointKdTree> trees;
  trees.reserve(dataset.size());
  for (const auto& obj : dataset) trees.emplace_back(obj.surface.points);

  std::vector<std::vector<PatchExtrinsics>> anchors;

  int global_epoch = 0;
  for (int phase = 1; phase <= 3; ++phase) {
    Adam opt_net, opt_lat;
    const double lr0_net = phase == 3 ? cfg.lr_net / 5.0 : cfg.lr_net;
    const double lr0_lat = phase == 3 ? cfg.lr_codes / 5.0 : cfg.lr_codes;
    LossWeights lw_phase = cfg.weights;
    lw_phase.rot = 0.0;
    lw_phase.var = 5.0;
    if (phase == 1) lw_phase.scl = 2.0;
    if (phase == 3) lw_phase.scl = 0.02;

    if (phase == 2) {
      model.objectnet.scale_multiplier = cfg.phase2_scale;
      anchors.resize(dataset.size());
      for (int i = 0; i < n_objects; ++i) {
        const auto si = static_cast<std::size_t>(i);
        const VectorXd out = objectnet_forward(model.objectnet, model.object_latents[si]);
        anchors[si] = unpack_codes(out, n_p, n_z).extrinsics;
      }
    }

    for (int e = 0; e < cfg.phase_epochs; ++e, ++global_epoch) {
      const auto up = static_cast<std::uint64_t>(phase);
      const auto ue = static_cast<std::uint64_t>(e);
      const double lr_net = lr_at_epoch(lr0_net, e, cfg.lr_halving_period);
      const double lr_lat = lr_at_epoch(lr0_lat, e, cfg.lr_halving_period);
      const double omega_reg = omega_reg_at_epoch(cfg.weights.reg, e, cfg.reg_ramp_epochs);

      std::vector<int> order(static_cast<std::size_t>(n_objects));
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng(derive_seed(cfg.seed, kSeedShuffle, up, ue));
      shuffle_rng.shuffle(order);

      LossReport epoch_report;
      for (int begin = 0; begin < n_objects; begin += cfg.objectnet_batch_size) {
        const int bsz = std::min(cfg.objectnet_batch_size, n_objects - begin);
        MatrixXd latents(cfg.objectnet_latent, bsz);
        for (int bi = 0; bi < bsz; ++bi) {
          latents.col(bi) =
              model.object_latents[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + bi)])];
        }
        ObjectNetBatchCache cache;
        const MatrixXd out = objectnet_forward_batch(model.objectnet, latents, &cache);
        MatrixXd upstream = MatrixXd::Zero(out.rows(), bsz);
        std::vector<VectorXd> direct_lat_grad(static_cast<std::size_t>(bsz));

        for (int bi = 0; bi < bsz; ++bi) {
          const int obj = order[static_cast<std::size_t>(begin + bi)];
          const auto so = static_cast<std::size_t>(obj);
          const std::string context = "phase " + std::to_string(phase) + ", epoch " +
                                      std::to_string(e) + ", object " + std::to_string(obj);
          ShapeCodes codes = unpack_codes(out.col(bi), n_p, n_z);
          CodeGrads cg = CodeGrads::zeros_like(codes);
          LossReport rep;
          try {
            if (phase == 1) {
              const ExtTerms terms =
                  loss_ext(codes.extrinsics, dataset[so].surface, trees[so], lw_phase, &cg);
              rep.sur = terms.sur;
              rep.cov = terms.cov;
              rep.rot = terms.rot;
              rep.scl = terms.scl;
              rep.var = terms.var;
            } else {
              Rng draw_rng(derive_seed(cfg.seed, kSeedDraw, up, ue, static_cast<std::uint64_t>(obj)));
              const SdfSampleSet mini =
                  draw_minibatch(dataset[so].samples, cfg.samples_per_object, draw_rng);
              rep.recon = loss_recon(codes, decoder, mini, cfg.mixture_recon, &cg, nullptr);
              if (phase == 2) {
                const auto& snap = anchors[so];
                double tether = 0.0;
                for (int p = 0; p < n_p; ++p) {
                  const auto sp = static_cast<std::size_t>(p);
                  const Vec3 dcnt = codes.extrinsics[sp].c - snap[sp].c;
                  const double drr = codes.extrinsics[sp].r - snap[sp].r;
                  tether += cfg.tether_position_weight * dcnt.squaredNorm() +
                            cfg.tether_scale_weight * drr * drr;
                  cg.dc[sp] += (2.0 * cfg.tether_position_weight / n_p) * dcnt;
                  cg.dr[sp] += (2.0 * cfg.tether_scale_weight / n_p) * drr;
                }
                rep.tether = tether / n_p;
              } else {
                const ExtTerms terms =
                    loss_ext(codes.extrinsics, dataset[so].surface, trees[so], lw_phase, &cg);
                rep.sur = terms.sur;
                rep.cov = terms.cov;
                rep.rot = terms.rot;
                rep.scl = terms.scl;
                rep.var = terms.var;
              }
            }
            const VectorXd& u = model.object_latents[so];
            rep.reg = omega_reg * u.squaredNorm();
            direct_lat_grad[static_cast<std::size_t>(bi)] = 2.0 * omega_reg * u;
            rep.total = rep.recon + rep.sur + rep.cov + rep.rot + rep.scl + rep.var + rep.reg +
                        rep.tether;
            require(std::isfinite(rep.total), Errc::numeric_error, "non-finite loss");
          } catch (const Error& err) {
            rethrow_with_context(err, context);
          }
          epoch_report += rep;
          upstream.col(bi) = pack_code_grads(cg, n_p, n_z);
        }

        ObjectNetGrads net_grads = ObjectNetGrads::zeros_like(model.objectnet);
        const MatrixXd dlat =
            objectnet_backward_batch(model.objectnet, cache, upstream, net_grads);
        net_grads *= 1.0 / static_cast<double>(bsz);
        apply_layer_steps(opt_net, "on.L", model.objectnet, net_grads, lr_net);
        for (int bi = 0; bi < bsz; ++bi) {
          const int obj = order[static_cast<std::size_t>(begin + bi)];
          const VectorXd glat = dlat.col(bi) + direct_lat_grad[static_cast<std::size_t>(bi)];
          opt_lat.step("u" + std::to_string(obj),
                       model.object_latents[static_cast<std::size_t>(obj)], glat, lr_lat);
        }
      }
      epoch_report *= 1.0 / static_cast<double>(n_objects);
      model.history.push_back({global_epoch, lr_net, lr_lat, omega_reg, epoch_report});
      if (on_epoch) on_epoch(model.history.back(), model);
    }
  }

  require(decoder_checksum(decoder) == decoder_digest, Errc::contract_violation,
          "decoder changed during regressor training");
  return model;
}

}  // namespace psdf
