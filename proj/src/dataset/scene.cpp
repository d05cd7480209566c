#include "scd/dataset/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <regex>

#include "json.hpp"
#include "scd/dataset/pairs.hpp"
#include "scd/errors.hpp"

namespace scd {

namespace fs = std::filesystem;

namespace {

std::string frame_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame-%06d", id);
  return buf;
}

std::vector<int> list_frame_ids(const fs::path& images) {
  static const std::regex pattern(R"(frame-(\d{6})\.color\.png)");
  std::vector<int> ids;
  for (const auto& entry : fs::directory_iterator(images)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern)) {
      ids.push_back(std::stoi(m[1].str()));
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

fs::path image_path(const fs::path& dir, int id) {
  return dir / "images" / (frame_stem(id) + ".color.png");
}

fs::path label_path(const fs::path& dir, int id) {
  return dir / "labels" / (frame_stem(id) + ".pts");
}

SceneDataset load_scene(const fs::path& dir, std::optional<Resolution> target) {
  if (!fs::is_directory(dir)) throw LoadError("scene directory " + dir.string() + " does not exist");
  if (!fs::is_directory(dir / "images")) {
    throw LoadError("scene " + dir.string() + " has no images/ directory");
  }
  const std::vector<int> ids = list_frame_ids(dir / "images");
  if (ids.empty()) throw LoadError("scene " + dir.string() + " contains no frames");
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] != static_cast<int>(k)) {
      throw LoadError("scene " + dir.string() + ": frame ids must run 0.." +
                      std::to_string(ids.size() - 1) + " without gaps; found frame " +
                      std::to_string(ids[k]) + " at position " + std::to_string(k));
    }
  }
  if (target && (target->first == 0 || target->second == 0)) {
    throw ConfigError("target resolution must be positive");
  }

  SceneDataset ds;
  ds.name = dir.filename().string();
  if (ds.name.empty()) ds.name = dir.parent_path().filename().string();
  const fs::path meta = dir / "meta.json";
  if (fs::exists(meta)) {
    try {
      std::ifstream in(meta);
      const auto j = nlohmann::json::parse(in);
      ds.name = j.value("scene", ds.name);
      ds.label_scale = j.value("label_scale", 1.0);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(meta.string() + ": " + e.what());
    }
    if (!(ds.label_scale > 0.0)) throw LoadError(meta.string() + ": label_scale must be positive");
  }

  std::size_t native_h = 0, native_w = 0;
  for (int id : ids) {
    Frame frame;
    frame.id = id;
    Image image;
    try {
      image = read_png(image_path(dir, id));
    } catch (const LoadError& e) {
      throw LoadError("frame " + std::to_string(id) + ": " + e.what());
    }
    if (native_h == 0) {
      native_h = image.height;
      native_w = image.width;
    } else if (image.height != native_h || image.width != native_w) {
      throw LoadError("frame " + std::to_string(id) + " is " + std::to_string(image.height) +
                      "x" + std::to_string(image.width) + ", earlier frames are " +
                      std::to_string(native_h) + "x" + std::to_string(native_w));
    }
    const std::size_t h = target ? target->first : native_h;
    const std::size_t w = target ? target->second : native_w;
    frame.image = resize_bilinear(image, h, w);

    const fs::path label = label_path(dir, id);
    if (fs::exists(label)) {
      try {
        PointMap pm = load_pointmap(label);
        pm.frame_id = id;
        frame.label = resize_nearest(pm, h, w);
      } catch (const LoadError& e) {
        throw LoadError("frame " + std::to_string(id) + " label: " + e.what());
      }
    }
    ds.frames.push_back(std::move(frame));
  }
  ds.height = ds.frames.front().image.height;
  ds.width = ds.frames.front().image.width;

  const fs::path pairs_file = dir / "pairs.txt";
  if (fs::exists(pairs_file)) {
    PairSpec spec;
    try {
      spec = complete_pairs(read_pairs(pairs_file).pairs);
    } catch (const ConfigError& e) {
      throw LoadError(pairs_file.string() + ": " + e.what());
    }
    for (const auto& [a, b] : spec.pairs) {
      if (a < 0 || b < 0 || a >= static_cast<int>(ids.size()) || b >= static_cast<int>(ids.size())) {
        throw LoadError(pairs_file.string() + ": pair (" + std::to_string(a) + "," +
                        std::to_string(b) + ") names a frame that does not exist");
      }
    }
    ds.pair_list = spec.pairs;
  }
  return ds;
}

void save_scene(const SceneDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  for (const auto& f : ds.frames) {
    write_png(image_path(dir, f.id), f.image);
    if (f.label) save_pointmap(*f.label, label_path(dir, f.id));
  }
  const nlohmann::json meta = {{"scene", ds.name},
                               {"native_resolution", {ds.height, ds.width}},
                               {"label_scale", ds.label_scale}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  if (ds.pair_list) write_pairs(PairSpec{*ds.pair_list}, dir / "pairs.txt");
}

SceneDataset scale_labels(const SceneDataset& ds, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw ConfigError("label scale factor must be positive, got " + std::to_string(factor));
  }
  SceneDataset out = ds;
  out.label_scale = ds.label_scale * factor;
  if (factor == 1.0) return out;
  for (auto& f : out.frames) {
    if (!f.label) continue;
    for (double& v : f.label->points) v *= factor;
  }
  return out;
}

SplitSpec split(const SceneDataset& ds, double heldout_fraction, std::uint64_t seed) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("held-out fraction must lie in (0, 1), got " +
                      std::to_string(heldout_fraction));
  }
  std::vector<int> labeled;
  for (const auto& f : ds.frames) {
    if (f.label) labeled.push_back(f.id);
  }
  const std::size_t n = labeled.size();
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n))));
  if (n < 2 || k >= n) {
    throw ConfigError("cannot split " + std::to_string(n) + " labelled frames with fraction " +
                      std::to_string(heldout_fraction) + " (need a frame on each side)");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(labeled.begin(), labeled.end(), rng);
  SplitSpec s;
  s.seed = seed;
  s.heldout.assign(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(k));
  s.train.assign(labeled.begin() + static_cast<std::ptrdiff_t>(k), labeled.end());
  std::sort(s.heldout.begin(), s.heldout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

}  // namespace scd
