#include "scd/cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "scd/alignment/global_align.hpp"
#include "scd/alignment/ply.hpp"
#include "scd/dataset/pairs.hpp"
#include "scd/dataset/scene.hpp"
#include "scd/dataset/synth.hpp"
#include "scd/errors.hpp"
#include "scd/models/builders.hpp"
#include "scd/models/checkpoint.hpp"
#include "scd/training/ablation.hpp"
#include "scd/training/config.hpp"
#include "scd/training/evaluate.hpp"
#include "scd/training/report.hpp"
#include "scd/training/trainer.hpp"

namespace scd::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using training::TrainConfig;

namespace {

// Parses "64" or "64x48" as (height, width).
Resolution parse_resolution(const std::string& text) {
  std::size_t h = 0, w = 0;
  char sep = 0;
  std::istringstream ss(text);
  if (!(ss >> h)) throw ConfigError("bad resolution '" + text + "' (expected H or HxW)");
  if (ss >> sep) {
    if (sep != 'x' || !(ss >> w)) throw ConfigError("bad resolution '" + text + "' (expected H or HxW)");
  } else {
    w = h;
  }
  std::string rest;
  if (ss >> rest || h == 0 || w == 0) throw ConfigError("bad resolution '" + text + "'");
  return {h, w};
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

std::string frame_file(int id, const std::string& ext) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "frame-%06d%s", id, ext.c_str());
  return buf;
}

void emit(std::ostream& out, const std::optional<fs::path>& path, const json& j) {
  if (path) {
    training::write_json(*path, j);
  } else {
    out << training::dump_json(j);
  }
}

// Training flags shared by train, ablate and info. Unset flags leave the
// config file (or the architecture defaults) alone.
struct TrainFlags {
  std::string config;
  std::string arch;
  std::optional<std::uint64_t> seed;
  std::optional<double> scale;
  std::optional<double> lr;
  std::optional<int> batch;
  std::string res;
  std::optional<double> heldout;
  std::string precision;
  bool no_dropout = false;
  std::string backbone_weights;

  // single-valued model flags (train, info)
  std::optional<int> epochs, patch_size, blocks, heads, latent;
  bool frozen = false;

  void add_common(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON training config; flags override it")
        ->check(CLI::ExistingFile);
    cmd->add_option("--arch", arch, "vanilla-cnn | backbone-head | vit")
        ->check(CLI::IsMember({"vanilla-cnn", "backbone-head", "vit"}));
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--scale", scale, "Label scale factor (default 100 for vit, 1 otherwise)");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--batch", batch, "Batch size");
    cmd->add_option("--res", res, "Training resolution, H or HxW (default 128)");
    cmd->add_option("--heldout", heldout, "Held-out fraction (default 0.1)");
    cmd->add_option("--precision", precision, "float32 | float64")
        ->check(CLI::IsMember({"float32", "float64"}));
    cmd->add_flag("--no-dropout", no_dropout, "Disable ViT dropout");
    cmd->add_option("--backbone-weights", backbone_weights,
                    "Checkpoint supplying backbone-head backbone weights");
  }

  void add_model(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_flag("--frozen", frozen, "Freeze the backbone (backbone-head)");
    cmd->add_option("--patch", patch_size, "ViT patch size");
    cmd->add_option("--blocks", blocks, "ViT encoder/decoder blocks");
    cmd->add_option("--heads", heads, "ViT attention heads");
    cmd->add_option("--latent", latent, "ViT latent dimension");
  }

  TrainConfig resolve(bool with_model_flags) const {
    TrainConfig cfg = training::default_config(models::Architecture::vit);
    if (!config.empty()) {
      std::ifstream in(config);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError(config + ": " + e.what());
      }
      cfg = training::train_config_from_json(j);
    }
    json patch = json::object();
    json model = json::object();
    if (!arch.empty()) patch["architecture"] = arch;
    if (seed) patch["seed"] = *seed;
    if (scale) patch["label_scale"] = *scale;
    if (lr) patch["lr"] = *lr;
    if (batch) patch["batch_size"] = *batch;
    if (!res.empty()) {
      const Resolution r = parse_resolution(res);
      patch["resolution"] = {r.first, r.second};
    }
    if (heldout) patch["heldout_fraction"] = *heldout;
    if (!precision.empty()) patch["precision"] = precision;
    if (no_dropout) patch["dropout"] = false;
    if (!backbone_weights.empty()) patch["backbone_weights"] = backbone_weights;
    if (with_model_flags) {
      if (epochs) patch["epochs"] = *epochs;
      if (frozen) model["frozen"] = true;
      if (patch_size) model["patch_size"] = *patch_size;
      if (blocks) model["num_blocks"] = *blocks;
      if (heads) model["num_heads"] = *heads;
      if (latent) model["latent_dim"] = *latent;
    }
    const std::string target = patch.value("architecture", std::string(models::to_string(cfg.model.architecture())));
    const auto target_arch = models::parse_architecture(target);
    auto reject = [&](bool set, const char* flag, models::Architecture needs) {
      if (set && target_arch != needs) {
        throw ConfigError(std::string(flag) + " does not apply to the " + target + " architecture");
      }
    };
    reject(model.contains("frozen"), "--frozen", models::Architecture::backbone_head);
    for (const char* key : {"patch_size", "num_blocks", "num_heads", "latent_dim"}) {
      reject(model.contains(key), "--patch/--blocks/--heads/--latent", models::Architecture::vit);
    }
    if (!model.empty()) patch["model"] = model;
    return training::train_config_from_json(patch, cfg);
  }

};

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool verbose = false;

  void log(const std::string& message) const {
    if (verbose) err << message << '\n';
  }
};

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::size_t frames = 6;
  std::uint64_t seed = 0;
  std::string out;
  std::string res = "64";
  int window = 3;
  double scale_jitter = 0.0;
  double invalid_fraction = 0.0;
  double label_invalid_fraction = 0.0;
};

int run_synth(const SynthArgs& a, const Context& ctx) {
  SynthSpec spec;
  spec.frames = a.frames;
  const Resolution r = parse_resolution(a.res);
  spec.height = r.first;
  spec.width = r.second;
  spec.pair_window = a.window;
  spec.pair_scale_jitter = a.scale_jitter;
  spec.pair_invalid_fraction = a.invalid_fraction;
  spec.label_invalid_fraction = a.label_invalid_fraction;
  SynthScene scene = synth_scene(spec, a.seed);
  const fs::path dir = a.out;
  std::vector<std::pair<int, int>> pairs;
  for (const auto& p : scene.pairs) pairs.emplace_back(p.ref_id, p.src_id);
  scene.dataset.pair_list = pairs;
  save_scene(scene.dataset, dir);
  save_teacher_pairs(scene.pairs, dir);
  json poses = json::array();
  for (std::size_t k = 0; k < scene.cam_to_world.size(); ++k) {
    poses.push_back({{"frame_id", k}, {"cam_to_world", sim3_to_json(scene.cam_to_world[k])}});
  }
  training::write_json(dir / "poses.json", {{"focal", scene.focal}, {"seed", a.seed}, {"frames", poses}});
  ctx.log("wrote " + std::to_string(scene.dataset.frames.size()) + " frames and " +
          std::to_string(scene.pairs.size()) + " teacher pairs to " + dir.string());
  return kOk;
}

// ---- pairs ----------------------------------------------------------------

int run_pairs(const std::string& scene_dir, int window, const std::string& out, const Context& ctx) {
  const SceneDataset ds = load_scene(scene_dir);
  const PairSpec spec = generate_pairs(ds, window);
  if (out.empty()) {
    for (const auto& [a, b] : spec.pairs) ctx.out << a << ' ' << b << '\n';
  } else {
    write_pairs(spec, out);
  }
  ctx.log(std::to_string(spec.pairs.size()) + " pairs");
  return kOk;
}

// ---- align ----------------------------------------------------------------

int run_align(const std::string& scene_dir, int origin, const std::string& out, const Context& ctx) {
  const fs::path dir = scene_dir;
  if (!fs::is_directory(dir)) throw LoadError("scene directory " + dir.string() + " does not exist");
  const PairSpec spec = fs::exists(dir / "pairs.txt") ? complete_pairs(read_pairs(dir / "pairs.txt").pairs)
                                                       : discover_teacher_pairs(dir);
  const std::vector<PairPrediction> pairs = load_teacher_pairs(dir, spec);
  const AlignmentResult result = global_align(pairs, origin);
  for (const auto& w : result.warnings) ctx.err << "warning: " << w << '\n';
  const json report = alignment_report(result);
  if (out.empty()) {
    ctx.out << training::dump_json(report);
    return kOk;
  }
  const fs::path out_dir = out;
  for (const auto& [id, frame] : result.frames) {
    save_pointmap(frame.world, out_dir / "world" / frame_file(id, ".pts"));
  }
  training::write_json(out_dir / "alignment.json", report);
  ctx.log("aligned " + std::to_string(result.frames.size()) + " frames into " + out_dir.string());
  return kOk;
}

// ---- train ----------------------------------------------------------------

template <typename T>
void train_and_save(const SceneDataset& ds, const TrainConfig& cfg, const fs::path& out_dir,
                    const Context& ctx) {
  const SplitSpec sp = split(ds, cfg.heldout_fraction, cfg.seed);
  auto progress = [&](int epoch, double loss) {
    ctx.log("epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) + " loss " +
            std::to_string(loss));
  };
  training::TrainResult<T> result = training::train<T>(ds, sp, cfg, progress);
  result.report.eval = training::evaluate(result.model, ds, sp.heldout);
  fs::create_directories(out_dir);
  models::save_checkpoint(result.model, out_dir / "model.ckpt");
  result.report.checkpoint = "model.ckpt";
  training::write_json(out_dir / "report.json", training::to_json(result.report));
  ctx.log("held-out mse " + std::to_string(result.report.eval->mse) + ", mean euclid " +
          std::to_string(result.report.eval->mean_euclid));
}

int run_train(const std::string& scene_dir, const TrainFlags& flags, const std::string& out,
              const Context& ctx) {
  const TrainConfig cfg = flags.resolve(true);
  const SceneDataset ds = load_scene(scene_dir, Resolution{cfg.height, cfg.width});
  if (cfg.precision == training::Precision::float64) {
    train_and_save<double>(ds, cfg, out, ctx);
  } else {
    train_and_save<float>(ds, cfg, out, ctx);
  }
  return kOk;
}

// ---- eval -----------------------------------------------------------------

int run_eval(const std::string& checkpoint, const std::string& scene_dir, const std::vector<int>& frames,
             const std::string& res, const std::string& out, const Context& ctx) {
  const auto model = models::load_checkpoint<float>(checkpoint);
  std::optional<Resolution> target;
  if (const auto* v = std::get_if<models::ViTConfig>(&model.config().arch)) {
    target = Resolution{static_cast<std::size_t>(v->image_h), static_cast<std::size_t>(v->image_w)};
    if (!res.empty() && parse_resolution(res) != *target) {
      throw ConfigError("--res disagrees with the checkpoint's ViT resolution");
    }
  } else if (!res.empty()) {
    target = parse_resolution(res);
  }
  const SceneDataset ds = load_scene(scene_dir, target);
  std::vector<int> ids = frames;
  if (ids.empty()) {
    for (const auto& f : ds.frames) {
      if (f.label) ids.push_back(f.id);
    }
  }
  const training::EvalReport report = training::evaluate(model, ds, ids);
  json j = training::to_json(report);
  j["format_version"] = training::kReportFormatVersion;
  j["label_scale"] = ds.label_scale;
  emit(ctx.out, out.empty() ? std::nullopt : std::optional<fs::path>(out), j);
  return kOk;
}

// ---- ablate ---------------------------------------------------------------

struct AblateArgs {
  std::string scene;
  std::string grid;
  std::string out;
  int jobs = 1;
  std::vector<int> epochs, patch, blocks, heads, latent;
  std::vector<std::string> frozen;
};

int run_ablate(const AblateArgs& a, const TrainFlags& flags, const Context& ctx) {
  training::AblationGrid grid;
  if (!a.grid.empty()) grid = training::ablation_grid_from_json(training::read_json(a.grid));
  if (!a.epochs.empty()) grid.epochs = a.epochs;
  if (!a.patch.empty()) grid.patch = a.patch;
  if (!a.blocks.empty()) grid.blocks = a.blocks;
  if (!a.heads.empty()) grid.heads = a.heads;
  if (!a.latent.empty()) grid.latent = a.latent;
  if (!a.frozen.empty()) {
    grid.frozen.clear();
    for (const auto& f : a.frozen) grid.frozen.push_back(parse_bool(f));
  }
  const TrainConfig base = flags.resolve(false);
  training::expand_grid(grid, base);  // validate before loading data
  const SceneDataset ds = load_scene(a.scene, Resolution{base.height, base.width});
  auto progress = [&](const training::AblationCell& c) {
    ctx.log("cell " + std::to_string(c.index) + " " + c.overrides.dump() + ": " +
            (c.ok ? "mean euclid " + std::to_string(c.report->eval->mean_euclid) : "failed: " + c.error));
  };
  const training::AblationResult result = training::ablate(grid, base, ds, a.jobs, progress);
  const json j = training::to_json(result, grid);
  emit(ctx.out, a.out.empty() ? std::nullopt : std::optional<fs::path>(fs::path(a.out) / "ablation.json"), j);
  return kOk;
}

// ---- export-ply -----------------------------------------------------------

int run_export(const std::string& input, const std::string& checkpoint, const std::string& scene_dir,
               std::optional<int> frame, const std::string& out, const Context& ctx) {
  PointMap pm;
  std::optional<SceneDataset> ds;
  if (!checkpoint.empty()) {
    if (scene_dir.empty() || !frame) throw ConfigError("--checkpoint needs --scene and --frame");
    const auto model = models::load_checkpoint<float>(checkpoint);
    std::optional<Resolution> target;
    if (const auto* v = std::get_if<models::ViTConfig>(&model.config().arch)) {
      target = Resolution{static_cast<std::size_t>(v->image_h), static_cast<std::size_t>(v->image_w)};
    }
    ds = load_scene(scene_dir, target);
    pm = training::predict(model, *ds, *frame);
  } else {
    if (input.empty()) throw ConfigError("export-ply needs a pointmap file or --checkpoint");
    pm = load_pointmap(input);
    if (!scene_dir.empty() && frame) ds = load_scene(scene_dir, Resolution{pm.height, pm.width});
  }
  std::vector<std::uint8_t> rgb;
  if (ds && frame) rgb = to_rgb8(training::frame_by_id(*ds, *frame).image);
  const std::size_t n = write_ply(out, pm, rgb);
  ctx.log("wrote " + std::to_string(n) + " vertices to " + out);
  return kOk;
}

// ---- info -----------------------------------------------------------------

int run_info(const std::string& path, const TrainFlags& flags, const Context& ctx) {
  json j;
  if (!path.empty()) {
    const models::CheckpointHeader h = models::read_checkpoint_header(path);
    std::size_t count = 0;
    for (const auto& e : h.parameters) count += shape_numel(e.shape);
    j["format_version"] = h.format_version;
    j["architecture"] = std::string(models::to_string(h.config.architecture()));
    j["config"] = models::config_to_json(h.config);
    j["tensors"] = h.parameters.size();
    j["param_count"] = count;
  } else {
    const TrainConfig cfg = flags.resolve(true);
    std::mt19937_64 rng(cfg.seed);
    const auto model = models::build_model<float>(training::resolved_model_config(cfg), rng);
    j["architecture"] = std::string(models::to_string(model.architecture()));
    j["config"] = models::config_to_json(model.config());
    j["tensors"] = model.parameters().size();
    j["param_count"] = models::param_count(model);
  }
  ctx.out << training::dump_json(j);
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene-coordinate distillation toolkit: synthetic scenes, pairwise alignment, "
               "student training and evaluation.",
               "scd"};
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);
  Context ctx{out, err};
  auto verbose = [&](CLI::App* cmd) { cmd->add_flag("-v,--verbose", ctx.verbose, "Progress on stderr"); };

  // synth
  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Render a synthetic room scene with exact labels and teacher pairs");
  c_synth->add_option("--frames", synth.frames, "Number of frames")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--out", synth.out, "Output scene directory")->required();
  c_synth->add_option("--res", synth.res, "Resolution, H or HxW")->capture_default_str();
  c_synth->add_option("--window", synth.window, "Teacher pair window")->capture_default_str();
  c_synth->add_option("--scale-jitter", synth.scale_jitter, "Per-pair teacher scale jitter in [0, 1)");
  c_synth->add_option("--invalid-fraction", synth.invalid_fraction, "Fraction of teacher pixels dropped");
  c_synth->add_option("--label-invalid-fraction", synth.label_invalid_fraction,
                      "Fraction of label pixels dropped");
  verbose(c_synth);

  // pairs
  std::string pairs_scene, pairs_out;
  int pairs_window = 3;
  auto* c_pairs = app.add_subcommand("pairs", "Write the sliding-window pair list of a scene");
  c_pairs->add_option("--scene,scene", pairs_scene, "Scene directory")->required();
  c_pairs->add_option("--window", pairs_window, "Pair window")->capture_default_str();
  c_pairs->add_option("--out", pairs_out, "Output pairs file (stdout when absent)");
  verbose(c_pairs);

  // align
  std::string align_scene, align_out;
  int align_origin = 0;
  auto* c_align = app.add_subcommand("align", "Fuse the scene's teacher pairs into one world frame");
  c_align->add_option("--scene,scene", align_scene, "Scene directory with teacher/ pairs")->required();
  c_align->add_option("--origin", align_origin, "Origin frame id")->capture_default_str();
  c_align->add_option("--out", align_out,
                      "Output directory for world pointmaps and alignment.json (report to stdout when absent)");
  verbose(c_align);

  // train
  TrainFlags train_flags;
  std::string train_scene, train_out;
  auto* c_train = app.add_subcommand("train", "Train a student model on a labelled scene");
  c_train->add_option("--scene,scene", train_scene, "Scene directory")->required();
  c_train->add_option("--out", train_out, "Output directory for model.ckpt and report.json")->required();
  train_flags.add_common(c_train);
  train_flags.add_model(c_train);
  verbose(c_train);

  // eval
  std::string eval_ckpt, eval_scene, eval_res, eval_out;
  std::vector<int> eval_frames;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on labelled frames");
  c_eval->add_option("--checkpoint,checkpoint", eval_ckpt, "Checkpoint file")->required();
  c_eval->add_option("--scene", eval_scene, "Scene directory")->required();
  c_eval->add_option("--frames", eval_frames, "Frame ids (default: every labelled frame)")->delimiter(',');
  c_eval->add_option("--res", eval_res, "Resolution for CNN checkpoints, H or HxW (default native)");
  c_eval->add_option("--out", eval_out, "Output report file (stdout when absent)");
  verbose(c_eval);

  // ablate
  TrainFlags ablate_flags;
  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate every cell of a hyperparameter grid");
  c_ablate->add_option("--scene,scene", ablate.scene, "Scene directory")->required();
  c_ablate->add_option("--grid", ablate.grid, "JSON grid {epochs, frozen, patch, blocks, heads, latent}")
      ->check(CLI::ExistingFile);
  c_ablate->add_option("--out", ablate.out, "Output directory for ablation.json (stdout when absent)");
  c_ablate->add_option("--jobs", ablate.jobs, "Cells trained concurrently")->check(CLI::PositiveNumber);
  c_ablate->add_option("--epochs", ablate.epochs, "Epoch axis, comma separated")->delimiter(',');
  c_ablate->add_option("--frozen", ablate.frozen, "Frozen axis, e.g. true,false")->delimiter(',');
  c_ablate->add_option("--patch", ablate.patch, "Patch size axis")->delimiter(',');
  c_ablate->add_option("--blocks", ablate.blocks, "Block count axis")->delimiter(',');
  c_ablate->add_option("--heads", ablate.heads, "Head count axis")->delimiter(',');
  c_ablate->add_option("--latent", ablate.latent, "Latent dimension axis")->delimiter(',');
  ablate_flags.add_common(c_ablate);
  verbose(c_ablate);

  // export-ply
  std::string ply_input, ply_ckpt, ply_scene, ply_out;
  std::optional<int> ply_frame;
  auto* c_ply = app.add_subcommand("export-ply", "Write a pointmap or a model prediction as ASCII PLY");
  c_ply->add_option("input", ply_input, "PointMap file (.pts)");
  c_ply->add_option("--checkpoint", ply_ckpt, "Export this model's prediction instead");
  c_ply->add_option("--scene", ply_scene, "Scene directory (colours, or model input)");
  c_ply->add_option("--frame", ply_frame, "Frame id for colours or prediction");
  c_ply->add_option("--out", ply_out, "Output .ply file")->required();
  verbose(c_ply);

  // info
  TrainFlags info_flags;
  std::string info_path;
  auto* c_info = app.add_subcommand("info", "Parameter count of a checkpoint or of a configuration");
  c_info->add_option("checkpoint", info_path, "Checkpoint file (otherwise the flags describe a model)");
  info_flags.add_common(c_info);
  info_flags.add_model(c_info);
  verbose(c_info);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth, ctx);
    if (c_pairs->parsed()) return run_pairs(pairs_scene, pairs_window, pairs_out, ctx);
    if (c_align->parsed()) return run_align(align_scene, align_origin, align_out, ctx);
    if (c_train->parsed()) return run_train(train_scene, train_flags, train_out, ctx);
    if (c_eval->parsed()) return run_eval(eval_ckpt, eval_scene, eval_frames, eval_res, eval_out, ctx);
    if (c_ablate->parsed()) return run_ablate(ablate, ablate_flags, ctx);
    if (c_ply->parsed()) return run_export(ply_input, ply_ckpt, ply_scene, ply_frame, ply_out, ctx);
    if (c_info->parsed()) return run_info(info_path, info_flags, ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDomainError;
  }
  return kUsageError;
}

}  // namespace scd::cli
