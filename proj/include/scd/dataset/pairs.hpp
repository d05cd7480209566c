#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "scd/alignment/pointmap.hpp"
#include "scd/dataset/scene.hpp"

namespace scd {

struct PairSpec {
  std::vector<std::pair<int, int>> pairs;  // (ref_id, src_id)
};

// Sliding window over capture order: for ascending i and 1 <= k <= window,
// (i, i+k) then (i+k, i). window < 1 throws ConfigError.
PairSpec generate_pairs(const SceneDataset& ds, int window);

// The scene's explicit pair list when it has one, else generate_pairs.
PairSpec scene_pairs(const SceneDataset& ds, int window);

// Adds any missing reverse order right after its partner; rejects self pairs
// and duplicates (ConfigError).
PairSpec complete_pairs(const std::vector<std::pair<int, int>>& pairs);

void write_pairs(const PairSpec& spec, const std::filesystem::path& path);
// Throws LoadError on malformed lines.
PairSpec read_pairs(const std::filesystem::path& path);

std::filesystem::path teacher_path(const std::filesystem::path& dir, int ref, int src,
                                   bool ref_side);
void save_teacher_pairs(const std::vector<PairPrediction>& pairs, const std::filesystem::path& dir);
// Every pair of `spec` must have both files under dir/teacher (LoadError).
std::vector<PairPrediction> load_teacher_pairs(const std::filesystem::path& dir,
                                               const PairSpec& spec);
// Pairs discovered from the teacher/ file names, ordered by (ref, src).
PairSpec discover_teacher_pairs(const std::filesystem::path& dir);

}  // namespace scd
