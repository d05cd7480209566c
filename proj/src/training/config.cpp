#include "scd/training/config.hpp"

#include <cmath>
#include <set>

#include "scd/errors.hpp"

namespace scd::training {

using nlohmann::json;
using models::Architecture;

namespace {

const std::set<std::string> kKeys = {
    "architecture", "model",  "epochs",           "lr",        "label_scale",
    "batch_size",   "seed",   "dropout",          "resolution", "heldout_fraction",
    "precision",    "backbone_weights"};

}  // namespace

double TrainConfig::resolved_lr() const {
  if (lr) return *lr;
  return model.architecture() == Architecture::vit ? 1e-4 : 1e-3;
}

double TrainConfig::resolved_label_scale() const {
  if (label_scale) return *label_scale;
  return model.architecture() == Architecture::vit ? 100.0 : 1.0;
}

TrainConfig default_config(Architecture arch) {
  TrainConfig cfg;
  switch (arch) {
    case Architecture::vit:
      cfg.model.arch = models::ViTConfig{};
      break;
    case Architecture::vanilla_cnn:
      cfg.model.arch = models::VanillaCNNConfig{};
      break;
    case Architecture::backbone_head:
      cfg.model.arch = models::BackboneHeadConfig{};
      break;
  }
  return cfg;
}

models::ModelConfig resolved_model_config(const TrainConfig& cfg) {
  validate(cfg);
  models::ModelConfig m = cfg.model;
  m.output_scale = cfg.resolved_label_scale();
  if (auto* v = std::get_if<models::ViTConfig>(&m.arch)) {
    v->image_h = static_cast<int>(cfg.height);
    v->image_w = static_cast<int>(cfg.width);
    if (!cfg.dropout) v->dropout_p = 0.0;
  }
  models::validate(m);
  return m;
}

void validate(const TrainConfig& cfg) {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
  };
  require(cfg.epochs >= 1, "epochs must be at least 1, got " + std::to_string(cfg.epochs));
  require(cfg.batch_size >= 1, "batch size must be at least 1, got " + std::to_string(cfg.batch_size));
  const double lr = cfg.resolved_lr();
  require(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
  const double scale = cfg.resolved_label_scale();
  require(scale > 0.0 && std::isfinite(scale), "label scale must be positive");
  require(cfg.height > 0 && cfg.width > 0, "resolution must be positive");
  require(cfg.heldout_fraction > 0.0 && cfg.heldout_fraction < 1.0,
          "held-out fraction must lie in (0, 1)");
  require(!cfg.backbone_weights || cfg.model.architecture() == Architecture::backbone_head,
          "backbone weights only apply to the backbone-head architecture");
}

std::string to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& tag) {
  if (tag == "float32") return Precision::float32;
  if (tag == "float64") return Precision::float64;
  throw ConfigError("unknown precision '" + tag + "' (expected float32 or float64)");
}

json to_json(const TrainConfig& cfg) {
  json j;
  j["architecture"] = std::string(models::to_string(cfg.model.architecture()));
  json model = models::config_to_json(cfg.model);
  model.erase("output_scale");  // derived from label_scale
  j["model"] = model;
  j["epochs"] = cfg.epochs;
  j["lr"] = cfg.resolved_lr();
  j["label_scale"] = cfg.resolved_label_scale();
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["dropout"] = cfg.dropout;
  j["resolution"] = {cfg.height, cfg.width};
  j["heldout_fraction"] = cfg.heldout_fraction;
  j["precision"] = to_string(cfg.precision);
  j["backbone_weights"] = cfg.backbone_weights ? json(cfg.backbone_weights->string()) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  Architecture arch = Architecture::vit;
  if (j.is_object() && j.contains("architecture")) {
    if (!j.at("architecture").is_string()) throw ConfigError("architecture must be a string");
    arch = models::parse_architecture(j.at("architecture").get<std::string>());
  }
  return train_config_from_json(j, default_config(arch));
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.count(key)) throw ConfigError("unknown training config key '" + key + "'");
  }
  TrainConfig cfg = base;
  try {
    Architecture arch = base.model.architecture();
    if (j.contains("architecture")) {
      arch = models::parse_architecture(j.at("architecture").get<std::string>());
    }
    json model = arch == base.model.architecture() ? models::config_to_json(base.model)
                                                   : models::config_to_json(default_config(arch).model);
    if (j.contains("model")) model.update(j.at("model"));
    cfg.model = models::config_from_json(arch, model);
    cfg.epochs = j.value("epochs", cfg.epochs);
    if (j.contains("lr") && !j.at("lr").is_null()) cfg.lr = j.at("lr").get<double>();
    if (j.contains("label_scale") && !j.at("label_scale").is_null()) {
      cfg.label_scale = j.at("label_scale").get<double>();
    }
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dropout = j.value("dropout", cfg.dropout);
    if (j.contains("resolution")) {
      const auto res = j.at("resolution").get<std::vector<std::size_t>>();
      if (res.size() != 2) throw ConfigError("resolution must be [height, width]");
      cfg.height = res[0];
      cfg.width = res[1];
    }
    cfg.heldout_fraction = j.value("heldout_fraction", cfg.heldout_fraction);
    if (j.contains("precision")) cfg.precision = parse_precision(j.at("precision").get<std::string>());
    if (j.contains("backbone_weights")) {
      const json& w = j.at("backbone_weights");
      if (w.is_null()) {
        cfg.backbone_weights.reset();
      } else {
        cfg.backbone_weights = std::filesystem::path(w.get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

}  // namespace scd::training
