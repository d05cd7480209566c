#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "scd/models/config.hpp"

namespace scd::training {

enum class Precision { float32, float64 };

struct TrainConfig {
  models::ModelConfig model;
  int epochs = 200;
  // Unset values take the architecture default: lr 1e-4 for the ViT and 1e-3
  // for the CNN variants, label scale 100 for the ViT and 1 otherwise.
  std::optional<double> lr;
  std::optional<double> label_scale;
  int batch_size = 2;
  std::uint64_t seed = 0;
  // Off forces the ViT dropout probability to zero.
  bool dropout = true;
  std::size_t height = 128;
  std::size_t width = 128;
  double heldout_fraction = 0.1;
  Precision precision = Precision::float32;
  // Optional checkpoint supplying the backbone-head backbone weights.
  std::optional<std::filesystem::path> backbone_weights;

  double resolved_lr() const;
  double resolved_label_scale() const;
};

// Architecture defaults applied: the model config for `arch` with the given
// resolution, lr and label scale left unset.
TrainConfig default_config(models::Architecture arch);

// The model config actually built for training: resolution copied into the
// ViT, dropout flag applied, output gain = label scale. Also validates
// everything (ConfigError).
models::ModelConfig resolved_model_config(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

// Every field, with lr and label_scale resolved.
nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep the defaults of the named architecture (or of `base`).
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base);

std::string to_string(Precision p);
Precision parse_precision(const std::string& tag);

}  // namespace scd::training
