// Command-line front end. Every artifact-producing run writes a manifest
// (command, config, seed, inputs/outputs, config hash) next to its primary
// output before any artifact, so runs can be reproduced and audited.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "psdf/checkpoint.hpp"
#include "psdf/mesh.hpp"
#include "psdf/metrics.hpp"
#include "psdf/reconstruct.hpp"
#include "psdf/sampling.hpp"
#include "psdf/selftest.hpp"
#include "psdf/shapes.hpp"
#include "psdf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitUnexpected = 70;

std::uint64_t hash_json(const json& j) {
  const std::string text = j.dump(2) + "\n";
  return psdf::fnv1a64(text.data(), text.size());
}

void write_manifest(const std::string& primary_output, const std::string& command,
                    const std::string& config_path, std::uint64_t config_digest,
                    std::uint64_t seed, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json j;
  j["command"] = command;
  j["config"] = config_path;
  j["config_hash"] = psdf::hex64(config_digest);
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["tool_version"] = psdf::kToolVersion;
  const fs::path path = primary_output + ".manifest.json";
  std::ofstream out(path, std::ios::binary);
  psdf::require(out.good(), psdf::Errc::io_error, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  out.flush();
  psdf::require(out.good(), psdf::Errc::io_error, "short write to " + path.string());
}

std::string sibling_surface_path(const std::string& samples_path) {
  fs::path p(samples_path);
  p.replace_extension(".pnss");
  return p.string();
}

std::vector<psdf::ObjectData> load_dataset(const std::vector<std::string>& inputs) {
  psdf::require(!inputs.empty(), psdf::Errc::bad_argument, "at least one --input is required");
  std::vector<psdf::ObjectData> dataset;
  dataset.reserve(inputs.size());
  for (const auto& path : inputs) {
    psdf::ObjectData obj;
    obj.samples = psdf::load_sdf_samples(path);
    obj.surface = psdf::load_surface_samples(sibling_surface_path(path));
    dataset.push_back(std::move(obj));
  }
  return dataset;
}

// Loads a mesh either from a file or from an analytic spec like
// "sphere:0.7", "box:0.5,0.3,0.2", "torus:0.5,0.2".
psdf::TriMesh load_mesh_or_shape(const std::string& arg, int shape_resolution) {
  if (arg.find(':') != std::string::npos && !fs::exists(arg)) {
    return psdf::shape_mesh(psdf::parse_shape_spec(arg), shape_resolution);
  }
  return psdf::load_mesh(arg);
}

psdf::ShapeCodes codes_from_checkpoint(const std::string& checkpoint_path,
                                       const std::string& decoder_path, int object,
                                       psdf::DecoderWeights* decoder_out) {
  const int kind = psdf::checkpoint_kind(checkpoint_path);
  if (kind == 1) {
    psdf::DecoderCheckpoint ckpt = psdf::load_decoder_checkpoint(checkpoint_path);
    psdf::require(object >= 0 && object < static_cast<int>(ckpt.codes.size()),
                  psdf::Errc::bad_argument,
                  "--object out of range: checkpoint holds " +
                      std::to_string(ckpt.codes.size()) + " objects");
    if (decoder_out) *decoder_out = std::move(ckpt.decoder);
    return ckpt.codes[static_cast<std::size_t>(object)];
  }
  psdf::require(!decoder_path.empty(), psdf::Errc::bad_argument,
                "an object-regressor checkpoint needs --decoder for the patch decoder");
  psdf::ObjectNetCheckpoint ckpt = psdf::load_objectnet_checkpoint(checkpoint_path);
  psdf::require(object >= 0 && object < static_cast<int>(ckpt.object_latents.size()),
                psdf::Errc::bad_argument,
                "--object out of range: checkpoint holds " +
                    std::to_string(ckpt.object_latents.size()) + " objects");
  if (decoder_out) {
    *decoder_out = psdf::load_decoder_checkpoint(decoder_path).decoder;
  }
  const psdf::VectorXd out = psdf::objectnet_forward(
      ckpt.objectnet, ckpt.object_latents[static_cast<std::size_t>(object)]);
  return psdf::unpack_codes(out, ckpt.objectnet.n_p, ckpt.objectnet.n_z);
}

void report_epoch(const psdf::EpochStats& stats, int print_every) {
  if (print_every <= 0) return;
  if ((stats.epoch + 1) % print_every != 0) return;
  std::cout << "epoch " << stats.epoch << " total " << stats.report.total << " recon "
            << stats.report.recon << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"patchsdf: patch-based implicit shape representation"};
  app.require_subcommand(1);

  int threads = 0;
  bool deterministic = false;
  app.add_option("--threads", threads, "worker thread bound (0 = hardware)")
      ->envname("PSDF_THREADS");
  app.add_flag("--deterministic", deterministic,
               "single-threaded fixed-order reductions");

  // preprocess
  auto* cmd_pre = app.add_subcommand(
      "preprocess", "mesh (or shape spec) -> SDF sample set + surface samples");
  std::string pre_mesh;
  std::string pre_out;
  int pre_count = 200000;
  int pre_surface_count = 10000;
  int pre_shape_res = 4;
  double pre_truncation = 0.1;
  double pre_noise_sigma = 0.0;
  std::uint64_t pre_seed = 0;
  bool pre_no_normalize = false;
  cmd_pre->add_option("mesh", pre_mesh, "input mesh file or analytic spec")->required();
  cmd_pre->add_option("-o,--output", pre_out, "output stem (.pnsd/.pnss appended)")->required();
  cmd_pre->add_option("--count", pre_count, "SDF samples");
  cmd_pre->add_option("--surface-count", pre_surface_count, "surface samples");
  cmd_pre->add_option("--truncation", pre_truncation, "SDF truncation band");
  cmd_pre->add_option("--noise-sigma", pre_noise_sigma, "gaussian noise on stored SDF values");
  cmd_pre->add_option("--shape-resolution", pre_shape_res, "tessellation level for analytic specs");
  cmd_pre->add_option("--seed", pre_seed, "sampling seed");
  cmd_pre->add_flag("--no-normalize", pre_no_normalize, "skip unit-sphere normalization");

  // train
  auto* cmd_train = app.add_subcommand("train", "auto-decode a patch decoder over a dataset");
  std::string train_config;
  std::vector<std::string> train_inputs;
  std::string train_out;
  std::string train_history;
  int train_ckpt_every = 0;
  int train_print_every = 0;
  cmd_train->add_option("--config", train_config, "training config JSON")->required();
  cmd_train->add_option("--input", train_inputs, "sample set (.pnsd, sibling .pnss)")
      ->required();
  cmd_train->add_option("-o,--output", train_out, "checkpoint path")->required();
  cmd_train->add_option("--history", train_history, "loss history CSV");
  cmd_train->add_option("--checkpoint-every", train_ckpt_every,
                        "also write <output>.epoch<E> snapshots every K epochs");
  cmd_train->add_option("--print-every", train_print_every, "log every K epochs");

  // train-objectnet
  auto* cmd_tobj = app.add_subcommand(
      "train-objectnet", "train the object-level extrinsics+latent regressor");
  std::string tobj_config;
  std::string tobj_decoder;
  std::vector<std::string> tobj_inputs;
  std::string tobj_out;
  std::string tobj_history;
  int tobj_print_every = 0;
  cmd_tobj->add_option("--config", tobj_config, "training config JSON")->required();
  cmd_tobj->add_option("--decoder", tobj_decoder, "trained decoder checkpoint")->required();
  cmd_tobj->add_option("--input", tobj_inputs, "sample set (.pnsd, sibling .pnss)")
      ->required();
  cmd_tobj->add_option("-o,--output", tobj_out, "regressor checkpoint path")->required();
  cmd_tobj->add_option("--history", tobj_history, "loss history CSV");
  cmd_tobj->add_option("--print-every", tobj_print_every, "log every K epochs");

  // fit
  auto* cmd_fit = app.add_subcommand("fit", "fit codes for one object, decoder frozen");
  std::string fit_config;
  std::string fit_ckpt;
  std::string fit_input;
  std::string fit_out;
  std::string fit_history;
  cmd_fit->add_option("--config", fit_config, "training config JSON")->required();
  cmd_fit->add_option("--checkpoint", fit_ckpt, "trained decoder checkpoint")->required();
  cmd_fit->add_option("--input", fit_input, "sample set (.pnsd, sibling .pnss)")->required();
  cmd_fit->add_option("-o,--output", fit_out, "checkpoint with the fitted codes")->required();
  cmd_fit->add_option("--history", fit_history, "loss history CSV");

  // reconstruct
  auto* cmd_rec = app.add_subcommand("reconstruct", "extract the blended surface as OBJ");
  std::string rec_ckpt;
  std::string rec_decoder;
  std::string rec_out;
  int rec_object = 0;
  int rec_res = 128;
  cmd_rec->add_option("--checkpoint", rec_ckpt, "decoder or regressor checkpoint")->required();
  cmd_rec->add_option("--decoder", rec_decoder, "decoder checkpoint (regressor input only)");
  cmd_rec->add_option("--object", rec_object, "object index");
  cmd_rec->add_option("--resolution", rec_res, "marching-cubes grid points per axis");
  cmd_rec->add_option("-o,--output", rec_out, "output OBJ")->required();

  // complete
  auto* cmd_comp = app.add_subcommand(
      "complete", "complete a partial observation through the object regressor");
  std::string comp_objectnet;
  std::string comp_decoder;
  std::string comp_partial;
  std::string comp_mesh;
  std::string comp_config;
  std::string comp_out;
  std::string comp_stage1_out;
  std::vector<double> comp_camera;
  int comp_res = -1;
  std::int64_t comp_seed = -1;
  cmd_comp->add_option("--objectnet", comp_objectnet, "regressor checkpoint")->required();
  cmd_comp->add_option("--decoder", comp_decoder, "decoder checkpoint")->required();
  cmd_comp->add_option("--partial", comp_partial, "partial surface samples (.pnss)");
  cmd_comp->add_option("--mesh", comp_mesh, "mesh or shape spec to render a view of");
  cmd_comp->add_option("--camera", comp_camera, "camera origin x y z")->expected(3);
  cmd_comp->add_option("--config", comp_config, "completion config JSON");
  cmd_comp->add_option("--resolution", comp_res, "override config resolution");
  cmd_comp->add_option("--seed", comp_seed, "override config seed");
  cmd_comp->add_option("-o,--output", comp_out, "output OBJ")->required();
  cmd_comp->add_option("--stage1-output", comp_stage1_out,
                       "also write the unrefined stage-1 OBJ");

  // deform
  auto* cmd_def = app.add_subcommand("deform", "apply per-patch rigid edits, then extract");
  std::string def_ckpt;
  std::string def_decoder;
  std::string def_spec;
  std::string def_out;
  int def_object = 0;
  int def_res = 128;
  cmd_def->add_option("--checkpoint", def_ckpt, "decoder or regressor checkpoint")->required();
  cmd_def->add_option("--decoder", def_decoder, "decoder checkpoint (regressor input only)");
  cmd_def->add_option("--object", def_object, "object index");
  cmd_def->add_option("--spec", def_spec, "deformation spec JSON")->required();
  cmd_def->add_option("--resolution", def_res, "marching-cubes grid points per axis");
  cmd_def->add_option("-o,--output", def_out, "output OBJ")->required();

  // interpolate
  auto* cmd_interp = app.add_subcommand(
      "interpolate", "decode a blend of two object latents, then extract");
  std::string interp_ckpt;
  std::string interp_decoder;
  std::string interp_out;
  int interp_a = 0;
  int interp_b = 1;
  double interp_t = 0.5;
  int interp_res = 128;
  cmd_interp->add_option("--checkpoint", interp_ckpt, "regressor checkpoint")->required();
  cmd_interp->add_option("--decoder", interp_decoder, "decoder checkpoint")->required();
  cmd_interp->add_option("--a", interp_a, "first object index");
  cmd_interp->add_option("--b", interp_b, "second object index");
  cmd_interp->add_option("--t", interp_t, "blend factor in [0, 1]");
  cmd_interp->add_option("--resolution", interp_res, "marching-cubes grid points per axis");
  cmd_interp->add_option("-o,--output", interp_out, "output OBJ")->required();

  // sample-prior
  auto* cmd_prior = app.add_subcommand(
      "sample-prior", "draw a latent from the gaussian over training latents, then extract");
  std::string prior_ckpt;
  std::string prior_decoder;
  std::string prior_load;
  std::string prior_save;
  std::string prior_out;
  std::uint64_t prior_seed = 0;
  int prior_res = 128;
  cmd_prior->add_option("--checkpoint", prior_ckpt, "regressor checkpoint")->required();
  cmd_prior->add_option("--decoder", prior_decoder, "decoder checkpoint")->required();
  cmd_prior->add_option("--prior", prior_load, "load a fitted prior instead of refitting");
  cmd_prior->add_option("--save-prior", prior_save, "also write the fitted prior");
  cmd_prior->add_option("--seed", prior_seed, "sampling seed");
  cmd_prior->add_option("--resolution", prior_res, "marching-cubes grid points per axis");
  cmd_prior->add_option("-o,--output", prior_out, "output OBJ")->required();

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "compare a predicted mesh against ground truth");
  std::string eval_gt;
  std::string eval_pred;
  std::string eval_out;
  std::uint64_t eval_seed = 0;
  int eval_count = 100000;
  bool eval_json_fmt = false;
  cmd_eval->add_option("--gt", eval_gt, "ground-truth mesh or shape spec")->required();
  cmd_eval->add_option("--pred", eval_pred, "predicted mesh")->required();
  cmd_eval->add_option("--seed", eval_seed, "sampling seed");
  cmd_eval->add_option("--count", eval_count, "samples per metric");
  cmd_eval->add_flag("--json", eval_json_fmt, "emit JSON instead of CSV");
  cmd_eval->add_option("-o,--output", eval_out, "report path (default stdout)");

  // selftest
  auto* cmd_self = app.add_subcommand("selftest", "run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  psdf::set_thread_count(deterministic ? 1 : threads);

  if (*cmd_pre) {
    json eff = {{"count", pre_count},
                {"surface_count", pre_surface_count},
                {"truncation", pre_truncation},
                {"noise_sigma", pre_noise_sigma},
                {"shape_resolution", pre_shape_res},
                {"normalize", !pre_no_normalize},
                {"seed", pre_seed}};
    const std::string out_sdf = pre_out + ".pnsd";
    const std::string out_surf = pre_out + ".pnss";
    write_manifest(out_sdf, "preprocess", "", hash_json(eff), pre_seed, {pre_mesh},
                   {out_sdf, out_surf});
    psdf::TriMesh mesh = load_mesh_or_shape(pre_mesh, pre_shape_res);
    if (!pre_no_normalize) mesh = psdf::normalize_unit_sphere(mesh).mesh;
    psdf::SdfSampleSet samples =
        psdf::sample_sdf_set(mesh, pre_count, pre_truncation, pre_seed);
    if (pre_noise_sigma > 0.0) {
      samples = psdf::add_sdf_noise(samples, pre_noise_sigma, pre_seed + 1);
    }
    psdf::save_sdf_samples(samples, out_sdf);
    const psdf::SurfaceSamples surface =
        psdf::sample_surface(mesh, pre_surface_count, pre_seed + 2);
    psdf::save_surface_samples(surface, out_surf);
    std::cout << "wrote " << out_sdf << " (" << samples.size() << " samples), " << out_surf
              << " (" << surface.size() << " points)\n";
    return 0;
  }

  if (*cmd_train) {
    const psdf::TrainConfig cfg = psdf::load_train_config(train_config);
    if (train_history.empty()) train_history = train_out + ".history.csv";
    std::vector<std::string> outputs = {train_out, train_history};
    write_manifest(train_out, "train", train_config, psdf::config_hash(cfg), cfg.seed,
                   train_inputs, outputs);
    const std::vector<psdf::ObjectData> dataset = load_dataset(train_inputs);
    psdf::EpochCallback on_epoch;
    if (train_ckpt_every > 0 || train_print_every > 0) {
      on_epoch = [&](const psdf::EpochStats& stats, const psdf::DecoderWeights& decoder,
                     const std::vector<psdf::ShapeCodes>& codes) {
        report_epoch(stats, train_print_every);
        if (train_ckpt_every > 0 && (stats.epoch + 1) % train_ckpt_every == 0) {
          psdf::save_checkpoint(psdf::DecoderCheckpoint{decoder, codes},
                                train_out + ".epoch" + std::to_string(stats.epoch + 1));
        }
      };
    }
    psdf::TrainedModel model = psdf::train_patchnet(dataset, cfg, on_epoch);
    psdf::save_checkpoint(psdf::DecoderCheckpoint{model.decoder, model.codes}, train_out);
    psdf::write_history_csv(model.history, train_history);
    std::cout << "wrote " << train_out << " and " << train_history << "\n";
    return 0;
  }

  if (*cmd_tobj) {
    const psdf::TrainConfig cfg = psdf::load_train_config(tobj_config);
    if (tobj_history.empty()) tobj_history = tobj_out + ".history.csv";
    write_manifest(tobj_out, "train-objectnet", tobj_config, psdf::config_hash(cfg), cfg.seed,
                   [&] {
                     std::vector<std::string> ins = {tobj_decoder};
                     ins.insert(ins.end(), tobj_inputs.begin(), tobj_inputs.end());
                     return ins;
                   }(),
                   {tobj_out, tobj_history});
    const psdf::DecoderCheckpoint dec = psdf::load_decoder_checkpoint(tobj_decoder);
    const std::vector<psdf::ObjectData> dataset = load_dataset(tobj_inputs);
    psdf::ObjectNetCallback on_epoch;
    if (tobj_print_every > 0) {
      on_epoch = [&](const psdf::EpochStats& stats, const psdf::ObjectNetModel&) {
        report_epoch(stats, tobj_print_every);
      };
    }
    psdf::ObjectNetModel model = psdf::train_objectnet(dec.decoder, dataset, cfg, on_epoch);
    psdf::save_checkpoint(
        psdf::ObjectNetCheckpoint{model.objectnet, model.object_latents,
                                  model.template_extrinsics},
        tobj_out);
    psdf::write_history_csv(model.history, tobj_history);
    std::cout << "wrote " << tobj_out << " and " << tobj_history << "\n";
    return 0;
  }

  if (*cmd_fit) {
    const psdf::TrainConfig cfg = psdf::load_train_config(fit_config);
    std::vector<std::string> outputs = {fit_out};
    if (!fit_history.empty()) outputs.push_back(fit_history);
    write_manifest(fit_out, "fit", fit_config, psdf::config_hash(cfg), cfg.seed,
                   {fit_ckpt, fit_input}, outputs);
    const psdf::DecoderCheckpoint dec = psdf::load_decoder_checkpoint(fit_ckpt);
    const psdf::SdfSampleSet samples = psdf::load_sdf_samples(fit_input);
    const psdf::SurfaceSamples surface =
        psdf::load_surface_samples(sibling_surface_path(fit_input));
    std::vector<psdf::EpochStats> history;
    const psdf::ShapeCodes codes =
        psdf::fit_shape(dec.decoder, samples, surface, cfg, &history);
    psdf::save_checkpoint(psdf::DecoderCheckpoint{dec.decoder, {codes}}, fit_out);
    if (!fit_history.empty()) psdf::write_history_csv(history, fit_history);
    std::cout << "wrote " << fit_out << "\n";
    return 0;
  }

  if (*cmd_rec) {
    json eff = {{"object", rec_object}, {"resolution", rec_res}};
    write_manifest(rec_out, "reconstruct", "", hash_json(eff), 0,
                   {rec_ckpt, rec_decoder}, {rec_out});
    psdf::DecoderWeights decoder;
    const psdf::ShapeCodes codes =
        codes_from_checkpoint(rec_ckpt, rec_decoder, rec_object, &decoder);
    const psdf::TriMesh mesh = psdf::reconstruct_mesh(codes, decoder, rec_res);
    psdf::save_obj(mesh, rec_out);
    std::cout << "wrote " << rec_out << " (" << mesh.vertices.size() << " vertices)\n";
    return 0;
  }

  if (*cmd_comp) {
    psdf::CompletionConfig cfg;
    if (!comp_config.empty()) cfg = psdf::load_completion_config(comp_config);
    if (comp_res > 0) cfg.resolution = comp_res;
    if (comp_seed >= 0) cfg.seed = static_cast<std::uint64_t>(comp_seed);
    cfg.validate();
    psdf::require(comp_partial.empty() != comp_mesh.empty(), psdf::Errc::bad_argument,
                  "pass exactly one of --partial or --mesh");
    json eff = {{"iterations", cfg.iterations},
                {"refine_iterations", cfg.refine_iterations},
                {"lr", cfg.lr},
                {"resolution", cfg.resolution},
                {"seed", cfg.seed}};
    std::vector<std::string> inputs = {comp_objectnet, comp_decoder,
                                       comp_partial.empty() ? comp_mesh : comp_partial};
    std::vector<std::string> outputs = {comp_out};
    if (!comp_stage1_out.empty()) outputs.push_back(comp_stage1_out);
    write_manifest(comp_out, "complete", comp_config, hash_json(eff), cfg.seed, inputs,
                   outputs);

    psdf::SurfaceSamples partial;
    psdf::Vec3 camera = psdf::Vec3::Zero();
    if (!comp_partial.empty()) {
      psdf::require(comp_camera.size() == 3, psdf::Errc::bad_argument,
                    "--partial needs --camera to locate the sensor");
      partial = psdf::load_surface_samples(comp_partial);
      camera = psdf::Vec3(comp_camera[0], comp_camera[1], comp_camera[2]);
    } else {
      const psdf::TriMesh mesh = load_mesh_or_shape(comp_mesh, 4);
      psdf::CameraView view;
      if (comp_camera.size() == 3) {
        view.origin = psdf::Vec3(comp_camera[0], comp_camera[1], comp_camera[2]);
      }
      const psdf::PartialObservation obs = psdf::render_partial(mesh, view, cfg.seed);
      partial = obs.samples;
      camera = obs.camera_origin;
    }

    const psdf::ObjectNetCheckpoint onet = psdf::load_objectnet_checkpoint(comp_objectnet);
    const psdf::DecoderCheckpoint dec = psdf::load_decoder_checkpoint(comp_decoder);
    const psdf::CompletionResult result = psdf::complete_partial(
        onet.objectnet, dec.decoder, partial, camera, onet.object_latents, cfg);
    psdf::save_obj(result.mesh, comp_out);
    if (!comp_stage1_out.empty()) {
      psdf::save_obj(psdf::reconstruct_mesh(result.stage1_codes, dec.decoder, cfg.resolution),
                     comp_stage1_out);
    }
    std::cout << "wrote " << comp_out << " (" << result.mesh.vertices.size()
              << " vertices)\n";
    return 0;
  }

  if (*cmd_def) {
    json eff = {{"object", def_object}, {"resolution", def_res}};
    write_manifest(def_out, "deform", def_spec, hash_json(eff), 0,
                   {def_ckpt, def_decoder, def_spec}, {def_out});
    psdf::DecoderWeights decoder;
    const psdf::ShapeCodes codes =
        codes_from_checkpoint(def_ckpt, def_decoder, def_object, &decoder);
    const psdf::DeformSpec spec = psdf::load_deform_spec(def_spec);
    const psdf::ShapeCodes deformed = psdf::deform_codes(codes, spec);
    const psdf::TriMesh mesh = psdf::reconstruct_mesh(deformed, decoder, def_res);
    psdf::save_obj(mesh, def_out);
    std::cout << "wrote " << def_out << " (" << mesh.vertices.size() << " vertices)\n";
    return 0;
  }

  if (*cmd_interp) {
    json eff = {{"a", interp_a}, {"b", interp_b}, {"t", interp_t},
                {"resolution", interp_res}};
    write_manifest(interp_out, "interpolate", "", hash_json(eff), 0,
                   {interp_ckpt, interp_decoder}, {interp_out});
    const psdf::ObjectNetCheckpoint onet = psdf::load_objectnet_checkpoint(interp_ckpt);
    const psdf::DecoderCheckpoint dec = psdf::load_decoder_checkpoint(interp_decoder);
    const auto n = static_cast<int>(onet.object_latents.size());
    psdf::require(interp_a >= 0 && interp_a < n && interp_b >= 0 && interp_b < n,
                  psdf::Errc::bad_argument, "object index out of range");
    const psdf::ShapeCodes codes = psdf::interpolate_codes(
        onet.objectnet, onet.object_latents[static_cast<std::size_t>(interp_a)],
        onet.object_latents[static_cast<std::size_t>(interp_b)], interp_t);
    const psdf::TriMesh mesh = psdf::reconstruct_mesh(codes, dec.decoder, interp_res);
    psdf::save_obj(mesh, interp_out);
    std::cout << "wrote " << interp_out << " (" << mesh.vertices.size() << " vertices)\n";
    return 0;
  }

  if (*cmd_prior) {
    json eff = {{"seed", prior_seed}, {"resolution", prior_res}};
    std::vector<std::string> inputs = {prior_ckpt, prior_decoder};
    if (!prior_load.empty()) inputs.push_back(prior_load);
    std::vector<std::string> outputs = {prior_out};
    if (!prior_save.empty()) outputs.push_back(prior_save);
    write_manifest(prior_out, "sample-prior", "", hash_json(eff), prior_seed, inputs,
                   outputs);
    const psdf::ObjectNetCheckpoint onet = psdf::load_objectnet_checkpoint(prior_ckpt);
    const psdf::DecoderCheckpoint dec = psdf::load_decoder_checkpoint(prior_decoder);
    const psdf::GaussianPrior prior = prior_load.empty()
                                          ? psdf::fit_prior(onet.object_latents)
                                          : psdf::load_prior(prior_load);
    if (!prior_save.empty()) psdf::save_prior(prior, prior_save);
    const psdf::VectorXd latent = psdf::sample_prior(prior, prior_seed);
    const psdf::ShapeCodes codes = psdf::unpack_codes(
        psdf::objectnet_forward(onet.objectnet, latent), onet.objectnet.n_p,
        onet.objectnet.n_z);
    const psdf::TriMesh mesh = psdf::reconstruct_mesh(codes, dec.decoder, prior_res);
    psdf::save_obj(mesh, prior_out);
    std::cout << "wrote " << prior_out << " (" << mesh.vertices.size() << " vertices)\n";
    return 0;
  }

  if (*cmd_eval) {
    const psdf::TriMesh gt = load_mesh_or_shape(eval_gt, 4);
    const psdf::TriMesh pred = psdf::load_mesh(eval_pred);
    const psdf::EvalReport report = psdf::evaluate(gt, pred, eval_seed, eval_count);
    std::ostringstream body;
    if (eval_json_fmt) {
      body << psdf::eval_json_row(eval_gt, eval_pred, report) << "\n";
    } else {
      body << psdf::eval_csv_header() << "\n"
           << psdf::eval_csv_row(eval_gt, eval_pred, report) << "\n";
    }
    if (eval_out.empty()) {
      std::cout << body.str();
    } else {
      json eff = {{"seed", eval_seed}, {"count", eval_count}, {"json", eval_json_fmt}};
      write_manifest(eval_out, "eval", "", hash_json(eff), eval_seed, {eval_gt, eval_pred},
                     {eval_out});
      std::ofstream out(eval_out, std::ios::binary);
      psdf::require(out.good(), psdf::Errc::io_error, "cannot write " + eval_out);
      out << body.str();
      out.flush();
      psdf::require(out.good(), psdf::Errc::io_error, "short write to " + eval_out);
      std::cout << "wrote " << eval_out << "\n";
    }
    return 0;
  }

  if (*cmd_self) {
    const int failures = psdf::run_selftest(std::cout);
    if (failures > 0) {
      std::cerr << "selftest: " << failures << " failing contracts\n";
      return static_cast<int>(psdf::Errc::contract_violation);
    }
    std::cout << "selftest: all contracts hold\n";
    return 0;
  }

  return kExitUsage;
}

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const psdf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitUnexpected;
  }
}
