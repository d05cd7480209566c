#pragma once

#include <array>
#include <string>
#include <string_view>
#include <variant>

#include "json.hpp"

namespace scd::models {

enum class Architecture { vanilla_cnn, backbone_head, vit };

std::string_view to_string(Architecture arch);
// Accepts "vanilla-cnn", "backbone-head", "vit".
Architecture parse_architecture(std::string_view tag);

// Per-token expansion to `channels * p * p`, pixel shuffle by p, then
// 3x3 convs channels -> widths[0] -> widths[1] -> 3.
struct ConvHeadConfig {
  int channels = 16;
  std::array<int, 2> widths{64, 32};
};

struct ViTConfig {
  int image_h = 128;
  int image_w = 128;
  int patch_size = 32;
  int latent_dim = 256;
  int num_blocks = 6;  // encoder count == decoder count
  int num_heads = 4;
  double mlp_ratio = 4.0;
  double dropout_p = 0.1;
  ConvHeadConfig head;

  int grid_h() const { return image_h / patch_size; }
  int grid_w() const { return image_w / patch_size; }
  int tokens() const { return grid_h() * grid_w(); }
  int mlp_hidden() const;
};

// Six 3x3 conv stages with relu, then per-pixel 1x1 layers
// channels[5] -> head_hidden -> 3.
struct VanillaCNNConfig {
  std::array<int, 6> channels{32, 64, 128, 256, 512, 512};
  int head_hidden = 128;
};

// Three stride-2 4x4 conv stages (with relu) feeding a ConvHead that upsamples
// by 8 back to the input resolution.
struct BackboneHeadConfig {
  std::array<int, 3> channels{16, 32, 64};
  bool frozen = false;
  ConvHeadConfig head;
};

struct ModelConfig {
  std::variant<VanillaCNNConfig, BackboneHeadConfig, ViTConfig> arch = ViTConfig{};
  // Fixed gain on the network output; equals the label scale the model was
  // trained against so raw outputs live in scaled label units.
  double output_scale = 1.0;

  Architecture architecture() const;
};

// Throws ConfigError on any violated invariant.
void validate(const ModelConfig& config);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(Architecture arch, const nlohmann::json& j);

}  // namespace scd::models
