#include "scd/training/report.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include "scd/errors.hpp"

namespace scd::training {

using nlohmann::json;

json to_json(const EvalReport& eval) {
  json frames = json::array();
  for (const auto& f : eval.frames) {
    frames.push_back({{"frame_id", f.frame_id},
                      {"mse", f.mse},
                      {"mean_euclid", f.mean_euclid},
                      {"valid_pixels", f.valid_pixels}});
  }
  return {{"mse", eval.mse},
          {"mean_euclid", eval.mean_euclid},
          {"valid_pixels", eval.valid_pixels},
          {"frames", frames}};
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport e;
    e.mse = j.at("mse").get<double>();
    e.mean_euclid = j.at("mean_euclid").get<double>();
    e.valid_pixels = j.at("valid_pixels").get<std::size_t>();
    for (const auto& f : j.at("frames")) {
      e.frames.push_back({f.at("frame_id").get<int>(), f.at("mse").get<double>(),
                          f.at("mean_euclid").get<double>(), f.at("valid_pixels").get<std::size_t>()});
    }
    return e;
  } catch (const json::exception& ex) {
    throw LoadError(std::string("malformed eval report: ") + ex.what());
  }
}

json to_json(const TrainReport& r) {
  json j;
  j["format_version"] = kReportFormatVersion;
  j["config"] = r.config;
  j["loss_curve"] = r.loss_curve;
  j["eval"] = r.eval ? to_json(*r.eval) : json(nullptr);
  j["timings"] = {{"epoch_seconds", r.epoch_seconds},
                  {"total_seconds",
                   std::accumulate(r.epoch_seconds.begin(), r.epoch_seconds.end(), 0.0)}};
  j["seed"] = r.seed;
  j["param_count"] = r.param_count;
  j["train_ids"] = r.train_ids;
  j["heldout_ids"] = r.heldout_ids;
  j["checkpoint"] = r.checkpoint;
  return j;
}

TrainReport train_report_from_json(const json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kReportFormatVersion) {
      throw LoadError("report format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kReportFormatVersion) + ")");
    }
    TrainReport r;
    r.config = j.at("config");
    r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    if (!j.at("eval").is_null()) r.eval = eval_report_from_json(j.at("eval"));
    r.epoch_seconds = j.at("timings").at("epoch_seconds").get<std::vector<double>>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.param_count = j.at("param_count").get<std::size_t>();
    r.train_ids = j.at("train_ids").get<std::vector<int>>();
    r.heldout_ids = j.at("heldout_ids").get<std::vector<int>>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    return r;
  } catch (const json::exception& ex) {
    throw LoadError(std::string("malformed training report: ") + ex.what());
  }
}

json without_timings(const json& report) {
  json copy = report;
  if (copy.is_object()) copy.erase("timings");
  if (copy.is_object() && copy.contains("cells")) {
    for (auto& cell : copy["cells"]) {
      if (cell.is_object()) {
        cell.erase("timings");
        if (cell.contains("report") && cell["report"].is_object()) cell["report"].erase("timings");
      }
    }
  }
  return copy;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out << dump_json(j);
  if (!out) throw LoadError("failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace scd::training
