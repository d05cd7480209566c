#include "scd/training/ablation.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "scd/errors.hpp"
#include "scd/training/evaluate.hpp"
#include "scd/training/report.hpp"

namespace scd::training {

using nlohmann::json;
using models::Architecture;

namespace {

struct Axis {
  std::string name;
  std::vector<json> values;
};

void apply(TrainConfig& cfg, const std::string& axis, const json& value) {
  if (axis == "epochs") {
    cfg.epochs = value.get<int>();
    return;
  }
  if (axis == "frozen") {
    std::get<models::BackboneHeadConfig>(cfg.model.arch).frozen = value.get<bool>();
    return;
  }
  auto& vit = std::get<models::ViTConfig>(cfg.model.arch);
  const int v = value.get<int>();
  if (axis == "patch") vit.patch_size = v;
  if (axis == "blocks") vit.num_blocks = v;
  if (axis == "heads") vit.num_heads = v;
  if (axis == "latent") vit.latent_dim = v;
}

template <typename T>
TrainReport run_cell(const SceneDataset& ds, const SplitSpec& split, const TrainConfig& cfg) {
  TrainResult<T> result = train<T>(ds, split, cfg);
  result.report.eval = evaluate(result.model, ds, split.heldout);
  return std::move(result.report);
}

}  // namespace

std::vector<AblationCell> expand_grid(const AblationGrid& grid, const TrainConfig& base) {
  const Architecture arch = base.model.architecture();
  std::vector<Axis> axes;
  auto add = [&](const std::string& name, const auto& list) {
    if (list.empty()) return;
    Axis a{name, {}};
    for (const auto& v : list) a.values.emplace_back(v);
    axes.push_back(std::move(a));
  };
  add("epochs", grid.epochs);
  if (!grid.frozen.empty()) {
    if (arch != Architecture::backbone_head) {
      throw ConfigError("ablation: the frozen axis needs the backbone-head architecture");
    }
    Axis a{"frozen", {}};
    for (bool f : grid.frozen) a.values.emplace_back(f);
    axes.push_back(std::move(a));
  }
  const bool vit_axes = !grid.patch.empty() || !grid.blocks.empty() || !grid.heads.empty() ||
                        !grid.latent.empty();
  if (vit_axes && arch != Architecture::vit) {
    throw ConfigError("ablation: patch/blocks/heads/latent axes need the vit architecture");
  }
  add("patch", grid.patch);
  add("blocks", grid.blocks);
  add("heads", grid.heads);
  add("latent", grid.latent);
  if (axes.empty()) throw ConfigError("ablation grid is empty");

  std::vector<AblationCell> cells;
  std::vector<std::size_t> digit(axes.size(), 0);
  while (true) {
    AblationCell cell;
    cell.index = cells.size();
    cell.config = base;
    cell.overrides = json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const json& v = axes[a].values[digit[a]];
      cell.overrides[axes[a].name] = v;
      apply(cell.config, axes[a].name, v);
    }
    cells.push_back(std::move(cell));
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++digit[a] < axes[a].values.size()) break;
      digit[a] = 0;
      if (a == 0) return cells;
    }
  }
}

std::optional<std::size_t> select_best(const std::vector<AblationCell>& cells) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const AblationCell& c = cells[i];
    if (!c.ok || !c.report || !c.report->eval) continue;
    if (!best) {
      best = i;
      continue;
    }
    const TrainReport& b = *cells[*best].report;
    const double e = c.report->eval->mean_euclid, eb = b.eval->mean_euclid;
    if (e < eb || (e == eb && c.report->param_count < b.param_count)) best = i;
  }
  return best;
}

AblationResult ablate(const AblationGrid& grid, const TrainConfig& base, const SceneDataset& ds,
                      int jobs, const CellCallback& on_cell) {
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  AblationResult result;
  result.cells = expand_grid(grid, base);
  result.split = scd::split(ds, base.heldout_fraction, base.seed);

  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      AblationCell& cell = result.cells[i];
      try {
        cell.report = cell.config.precision == Precision::float64
                          ? run_cell<double>(ds, result.split, cell.config)
                          : run_cell<float>(ds, result.split, cell.config);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      if (on_cell) {
        std::lock_guard<std::mutex> lock(callback_mutex);
        on_cell(cell);
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), result.cells.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  result.best_cell = select_best(result.cells);
  return result;
}

AblationGrid ablation_grid_from_json(const json& j) {
  static const std::set<std::string> keys = {"epochs", "frozen", "patch", "blocks", "heads", "latent"};
  if (!j.is_object()) throw ConfigError("ablation grid must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!keys.count(key)) throw ConfigError("unknown ablation axis '" + key + "'");
  }
  try {
    AblationGrid g;
    g.epochs = j.value("epochs", g.epochs);
    g.frozen = j.value("frozen", g.frozen);
    g.patch = j.value("patch", g.patch);
    g.blocks = j.value("blocks", g.blocks);
    g.heads = j.value("heads", g.heads);
    g.latent = j.value("latent", g.latent);
    return g;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed ablation grid: ") + e.what());
  }
}

json to_json(const AblationGrid& g) {
  return {{"epochs", g.epochs}, {"frozen", g.frozen}, {"patch", g.patch},
          {"blocks", g.blocks}, {"heads", g.heads},   {"latent", g.latent}};
}

json to_json(const AblationResult& result, const AblationGrid& grid) {
  json cells = json::array();
  for (const auto& c : result.cells) {
    json rec;
    if (c.ok && c.report) {
      rec = to_json(*c.report);
      rec["final_loss"] = c.report->loss_curve.back();
    } else {
      rec["config"] = to_json(c.config);
      rec["final_loss"] = nullptr;
      rec["eval"] = nullptr;
    }
    rec["cell"] = c.index;
    rec["overrides"] = c.overrides;
    rec["status"] = c.ok ? "ok" : "failed";
    rec["error"] = c.error;
    cells.push_back(std::move(rec));
  }
  json j;
  j["format_version"] = kReportFormatVersion;
  j["grid"] = to_json(grid);
  j["split"] = {{"train", result.split.train}, {"heldout", result.split.heldout}};
  j["cells"] = cells;
  j["best_cell"] = result.best_cell ? json(*result.best_cell) : json(nullptr);
  return j;
}

}  // namespace scd::training
