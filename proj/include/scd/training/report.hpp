#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "scd/training/evaluate.hpp"
#include "scd/training/trainer.hpp"

namespace scd::training {

inline constexpr int kReportFormatVersion = 1;

nlohmann::json to_json(const EvalReport& eval);
EvalReport eval_report_from_json(const nlohmann::json& j);

// {format_version, config, loss_curve, eval: {mse, mean_euclid, valid_pixels,
//  frames}, timings: {epoch_seconds, total_seconds}, seed, param_count,
//  train_ids, heldout_ids, checkpoint}
nlohmann::json to_json(const TrainReport& report);
// Throws LoadError on a malformed report or another format version.
TrainReport train_report_from_json(const nlohmann::json& j);

// Copy of a report without wall-clock timings, for reproducibility checks.
nlohmann::json without_timings(const nlohmann::json& report);

// Two-space indented, trailing newline. Throws LoadError on I/O failure.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);
std::string dump_json(const nlohmann::json& j);

}  // namespace scd::training
