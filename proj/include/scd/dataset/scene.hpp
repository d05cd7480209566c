#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scd/alignment/pointmap.hpp"
#include "scd/dataset/image.hpp"

// Scene directory layout:
//   images/frame-000000.color.png   8-bit RGB, ids dense from 0
//   labels/frame-000000.pts         optional PointMap label per frame
//   pairs.txt                       optional "ref_id src_id" lines
//   meta.json                       optional {scene, native_resolution:[h,w], label_scale}
//   teacher/pair-000000-000001.{ref,src}.pts   optional pairwise teacher maps
namespace scd {

struct Frame {
  int id = 0;
  Image image;
  std::optional<PointMap> label;
};

struct SceneDataset {
  std::string name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Frame> frames;
  // Factor the labels carry relative to the teacher's original units.
  double label_scale = 1.0;
  // Explicit pair list from pairs.txt, if the scene has one.
  std::optional<std::vector<std::pair<int, int>>> pair_list;
};

using Resolution = std::pair<std::size_t, std::size_t>;  // (height, width)

// Loads every frame; images are resized bilinearly and labels by nearest
// neighbour to `target` (native resolution when absent). Throws LoadError for
// an empty or malformed directory, naming the offending frame.
SceneDataset load_scene(const std::filesystem::path& dir,
                        std::optional<Resolution> target = std::nullopt);

// Writes images, labels, meta.json and (when set) pairs.txt.
void save_scene(const SceneDataset& ds, const std::filesystem::path& dir);

std::filesystem::path image_path(const std::filesystem::path& dir, int id);
std::filesystem::path label_path(const std::filesystem::path& dir, int id);

// Labels multiplied by `factor`, which is folded into label_scale.
// factor <= 0 throws ConfigError.
SceneDataset scale_labels(const SceneDataset& ds, double factor);

struct SplitSpec {
  std::vector<int> train;    // ascending
  std::vector<int> heldout;  // ascending
  std::uint64_t seed = 0;
};

// Holds out max(1, round(fraction * n)) labelled frames, drawn uniformly
// without replacement with a seeded generator. Needs 0 < fraction < 1 and
// at least one frame on each side (ConfigError otherwise).
SplitSpec split(const SceneDataset& ds, double heldout_fraction, std::uint64_t seed);

}  // namespace scd
