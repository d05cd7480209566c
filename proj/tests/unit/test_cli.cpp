#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "scd/alignment/pointmap.hpp"
#include "scd/alignment/sim3.hpp"
#include "scd/alignment/global_align.hpp"
#include "scd/cli/cli.hpp"
#include "scd/dataset/scene.hpp"
#include "scd/models/builders.hpp"
#include "scd/training/config.hpp"
#include "scd/training/report.hpp"

using namespace scd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run scd_run(std::vector<std::string> args) {
  args.insert(args.begin(), "scd");
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("scd_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::vector<std::string> kTinyVitBase = {"--arch",   "vit", "--res",     "32",   "--latent", "16",
                                               "--blocks", "1",   "--heads",   "2",    "--heldout", "0.25",
                                               "--seed",   "9"};

std::vector<std::string> tiny_vit(const std::string& patch = "8") {
  std::vector<std::string> a = kTinyVitBase;
  a.insert(a.end(), {"--patch", patch});
  return a;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// A 4-frame 32x32 scene shared by the training tests.
const fs::path& scene32() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("scene32") / "scene";
    REQUIRE(scd_run({"synth", "--frames", "4", "--res", "32", "--seed", "3", "--out", d.string()}).code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("exit codes for help and usage errors") {
  const Run help = scd_run({"--help"});
  CHECK(help.code == cli::kOk);
  CHECK(help.out.find("align") != std::string::npos);
  CHECK(scd_run({"train", "--help"}).code == cli::kOk);
  CHECK(scd_run({}).code == cli::kUsageError);
  CHECK(scd_run({"frobnicate"}).code == cli::kUsageError);
  CHECK(scd_run({"synth"}).code == cli::kUsageError);  // --out is required
  CHECK(scd_run({"synth", "--out", "x", "--bogus"}).code == cli::kUsageError);
  CHECK(scd_run({"train", "--scene", "x", "--out", "y", "--arch", "resnet"}).code == cli::kUsageError);
  CHECK(scd_run({"synth", "--out", "x", "--frames", "zero"}).code == cli::kUsageError);
}

TEST_CASE("domain errors exit 1 with a message on stderr") {
  const fs::path dir = fresh_dir("errors");
  const Run missing = scd_run({"train", "--scene", (dir / "nope").string(), "--out", (dir / "o").string()});
  CHECK(missing.code == cli::kDomainError);
  CHECK(missing.err.find("does not exist") != std::string::npos);
  CHECK(missing.out.empty());

  const Run bad_fraction = scd_run(concat({"train", scene32().string(), "--out", (dir / "o").string(),
                                           "--heldout", "1.5"}, {}));
  CHECK(bad_fraction.code == cli::kDomainError);

  const Run frozen_vit = scd_run({"train", scene32().string(), "--out", (dir / "o").string(), "--arch", "vit",
                                  "--frozen"});
  CHECK(frozen_vit.code == cli::kDomainError);
  CHECK(frozen_vit.err.find("--frozen") != std::string::npos);

  const Run patch_cnn = scd_run({"info", "--arch", "vanilla-cnn", "--patch", "8"});
  CHECK(patch_cnn.code == cli::kDomainError);

  CHECK(scd_run({"align", (dir / "nope").string()}).code == cli::kDomainError);
  CHECK(scd_run({"eval", (dir / "missing.ckpt").string(), "--scene", scene32().string()}).code ==
        cli::kDomainError);
  CHECK(fs::is_empty(dir));  // failures leave nothing behind
}

TEST_CASE("synth then align recovers the ground-truth poses") {
  const fs::path dir = fresh_dir("align");
  const fs::path scene = dir / "scene";
  REQUIRE(scd_run({"synth", "--frames", "6", "--seed", "7", "--out", scene.string()}).code == 0);
  CHECK(fs::exists(scene / "pairs.txt"));
  CHECK(fs::exists(scene / "poses.json"));

  const Run r = scd_run({"align", scene.string(), "--origin", "0", "--out", (dir / "aligned").string()});
  REQUIRE(r.code == 0);
  CHECK(r.err.empty());
  const json report = training::read_json(dir / "aligned" / "alignment.json");
  REQUIRE(report.at("frames").size() == 6);
  REQUIRE(!report.at("residuals").empty());
  for (const auto& e : report.at("residuals")) {
    // teacher maps pass through float32 files
    CHECK(e.at("rmse").get<double>() <= 1e-6);
  }

  // world = camera 0 frame, so frame k's rotation is R0^T Rk.
  const json poses = training::read_json(scene / "poses.json");
  const Sim3 c0 = sim3_from_json(poses.at("frames")[0].at("cam_to_world"));
  for (const auto& f : report.at("frames")) {
    const int k = f.at("frame_id").get<int>();
    const Sim3 ck = sim3_from_json(poses.at("frames")[k].at("cam_to_world"));
    const Sim3 est = sim3_from_json(f);
    const Eigen::Matrix3d expected = c0.rotation.transpose() * ck.rotation;
    CHECK((est.rotation - expected).norm() < 1e-5);
    CHECK(est.scale == doctest::Approx(1.0).epsilon(1e-5));
    const PointMap world = load_pointmap(dir / "aligned" / "world" / ("frame-00000" + std::to_string(k) + ".pts"));
    CHECK(world.valid_count() == 64u * 64u);
  }

  // stdout form carries the same report
  const Run to_stdout = scd_run({"align", "--scene", scene.string()});
  REQUIRE(to_stdout.code == 0);
  CHECK(json::parse(to_stdout.out) == report);
}

TEST_CASE("align falls back to discovered teacher files") {
  const fs::path dir = fresh_dir("discover");
  const fs::path scene = dir / "scene";
  REQUIRE(scd_run({"synth", "--frames", "4", "--res", "16", "--window", "1", "--out", scene.string()}).code == 0);
  const Run with_list = scd_run({"align", scene.string()});
  fs::remove(scene / "pairs.txt");
  const Run discovered = scd_run({"align", scene.string()});
  REQUIRE(with_list.code == 0);
  REQUIRE(discovered.code == 0);
  CHECK(with_list.out == discovered.out);
}

TEST_CASE("pairs lists the sliding window") {
  const fs::path dir = fresh_dir("pairs");
  REQUIRE(scd_run({"synth", "--frames", "3", "--res", "8", "--out", (dir / "s").string()}).code == 0);
  const Run r = scd_run({"pairs", (dir / "s").string(), "--window", "1"});
  REQUIRE(r.code == 0);
  CHECK(r.out == "0 1\n1 0\n1 2\n2 1\n");
}

TEST_CASE("info reports the model's parameter count") {
  const Run r = scd_run({"info", "--arch", "vit", "--res", "64", "--patch", "16", "--latent", "64", "--blocks", "2"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  training::TrainConfig cfg = training::default_config(models::Architecture::vit);
  cfg.height = cfg.width = 64;
  auto& v = std::get<models::ViTConfig>(cfg.model.arch);
  v.patch_size = 16;
  v.latent_dim = 64;
  v.num_blocks = 2;
  std::mt19937_64 rng(0);
  const auto model = models::build_model<float>(training::resolved_model_config(cfg), rng);
  CHECK(j.at("param_count").get<std::size_t>() == models::param_count(model));
  CHECK(j.at("architecture") == "vit");
}

TEST_CASE("train, eval, info and export-ply agree") {
  const fs::path dir = fresh_dir("train");
  const Run t = scd_run(concat({"train", scene32().string(), "--out", (dir / "run").string(), "--epochs", "3"},
                               tiny_vit()));
  REQUIRE(t.code == 0);
  const json report = training::read_json(dir / "run" / "report.json");
  CHECK(report.at("checkpoint") == "model.ckpt");
  CHECK(report.at("loss_curve").size() == 3);
  REQUIRE(report.at("eval").is_object());

  std::string frames;
  for (const auto& id : report.at("heldout_ids")) {
    frames += (frames.empty() ? "" : ",") + std::to_string(id.get<int>());
  }
  const Run e = scd_run({"eval", (dir / "run" / "model.ckpt").string(), "--scene", scene32().string(), "--frames",
                         frames});
  REQUIRE(e.code == 0);
  const json eval = json::parse(e.out);
  CHECK(eval.at("mse") == report.at("eval").at("mse"));
  CHECK(eval.at("mean_euclid") == report.at("eval").at("mean_euclid"));

  const Run info = scd_run({"info", (dir / "run" / "model.ckpt").string()});
  REQUIRE(info.code == 0);
  CHECK(json::parse(info.out).at("param_count") == report.at("param_count"));

  const fs::path ply = dir / "pred.ply";
  REQUIRE(scd_run({"export-ply", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--scene",
                   scene32().string(), "--frame", "1", "--out", ply.string()})
              .code == 0);
  std::ifstream in(ply);
  std::string line;
  std::getline(in, line);
  CHECK(line == "ply");
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line == "element vertex 1024");
}

TEST_CASE("repeated invocations produce identical reports") {
  const fs::path dir = fresh_dir("repeat");
  for (const char* run : {"a", "b"}) {
    REQUIRE(scd_run(concat({"train", scene32().string(), "--out", (dir / run).string(), "--epochs", "2"}, tiny_vit()))
                .code == 0);
    REQUIRE(scd_run(concat({"ablate", scene32().string(), "--out", (dir / run).string(), "--epochs", "1",
                            "--jobs", std::string(run) == "a" ? "1" : "2"},
                           tiny_vit("8,16")))
                .code == 0);
  }
  for (const char* name : {"report.json", "ablation.json"}) {
    const json a = training::without_timings(training::read_json(dir / "a" / name));
    const json b = training::without_timings(training::read_json(dir / "b" / name));
    CHECK(a == b);
  }
  CHECK(training::read_json(dir / "a" / "ablation.json").at("cells").size() == 2);
}

TEST_CASE("ablate reads a grid file and rejects unknown axes") {
  const fs::path dir = fresh_dir("grid");
  training::write_json(dir / "grid.json", {{"epochs", {1}}, {"width", {3}}});
  const Run r = scd_run(concat({"ablate", scene32().string(), "--grid", (dir / "grid.json").string()}, tiny_vit()));
  CHECK(r.code == cli::kDomainError);
  CHECK(r.err.find("width") != std::string::npos);

  training::write_json(dir / "grid.json", {{"epochs", {1, 2}}});
  const Run ok = scd_run(concat({"ablate", scene32().string(), "--grid", (dir / "grid.json").string()}, tiny_vit()));
  REQUIRE(ok.code == 0);
  const json j = json::parse(ok.out);
  CHECK(j.at("cells").size() == 2);
  CHECK(j.at("cells")[1].at("loss_curve").size() == 2);
}

TEST_CASE("every subcommand's help lists its flags") {
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected = {
      {"synth", {"--frames", "--seed", "--out", "--res", "--window", "--scale-jitter", "--invalid-fraction"}},
      {"pairs", {"--scene", "--window", "--out"}},
      {"align", {"--scene", "--origin", "--out"}},
      {"train",
       {"--scene", "--out", "--config", "--seed", "--epochs", "--arch", "--frozen", "--scale", "--patch", "--blocks",
        "--heads", "--latent", "--lr", "--batch", "--res", "--heldout", "--precision", "--no-dropout",
        "--backbone-weights", "--verbose"}},
      {"eval", {"--checkpoint", "--scene", "--frames", "--res", "--out"}},
      {"ablate",
       {"--scene", "--grid", "--out", "--jobs", "--config", "--seed", "--epochs", "--arch", "--frozen", "--scale",
        "--patch", "--blocks", "--heads", "--latent"}},
      {"export-ply", {"--checkpoint", "--scene", "--frame", "--out"}},
      {"info", {"--arch", "--config", "--patch", "--blocks", "--heads", "--latent", "--res"}},
  };
  for (const auto& [cmd, flags] : expected) {
    const Run r = scd_run({cmd, "--help"});
    CAPTURE(cmd);
    CHECK(r.code == cli::kOk);
    for (const auto& flag : flags) {
      CAPTURE(flag);
      CHECK(r.out.find(flag) != std::string::npos);
    }
  }
}
