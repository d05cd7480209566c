#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scd/dataset/scene.hpp"
#include "scd/training/config.hpp"
#include "scd/training/trainer.hpp"

namespace scd::training {

// Each non-empty list is one axis of the Cartesian product; empty lists keep
// the base value. frozen applies to backbone-head only, the last four to the
// ViT only.
struct AblationGrid {
  std::vector<int> epochs;
  std::vector<bool> frozen;
  std::vector<int> patch;
  std::vector<int> blocks;
  std::vector<int> heads;
  std::vector<int> latent;
};

struct AblationCell {
  std::size_t index = 0;
  nlohmann::json overrides;  // the grid values of this cell
  TrainConfig config;
  bool ok = false;
  std::string error;
  std::optional<TrainReport> report;  // with held-out eval when ok
};

struct AblationResult {
  SplitSpec split;
  std::vector<AblationCell> cells;  // in grid order
  // Lowest held-out mean Euclidean error; ties go to fewer parameters, then
  // to the earlier cell. Empty when no cell succeeded.
  std::optional<std::size_t> best_cell;
};

// Cells in odometer order (epochs outermost, latent innermost).
// Throws ConfigError for an empty grid or an axis the architecture lacks.
std::vector<AblationCell> expand_grid(const AblationGrid& grid, const TrainConfig& base);

std::optional<std::size_t> select_best(const std::vector<AblationCell>& cells);

using CellCallback = std::function<void(const AblationCell&)>;

// Every cell trains on the same split (drawn from base.seed) with the same
// seed, then is evaluated on the held-out frames. A failing cell is recorded
// and the run continues. Up to `jobs` cells run concurrently; results do not
// depend on `jobs`.
AblationResult ablate(const AblationGrid& grid, const TrainConfig& base, const SceneDataset& ds,
                      int jobs = 1, const CellCallback& on_cell = {});

AblationGrid ablation_grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AblationGrid& grid);
// {format_version, grid, split: {train, heldout}, cells: [...], best_cell}
nlohmann::json to_json(const AblationResult& result, const AblationGrid& grid);

}  // namespace scd::training
