#include "scd/models/config.hpp"

#include <cmath>
#include <string>

#include "scd/errors.hpp"

namespace scd::models {

using nlohmann::json;

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::vanilla_cnn:
      return "vanilla-cnn";
    case Architecture::backbone_head:
      return "backbone-head";
    case Architecture::vit:
      return "vit";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view tag) {
  if (tag == "vanilla-cnn") return Architecture::vanilla_cnn;
  if (tag == "backbone-head") return Architecture::backbone_head;
  if (tag == "vit") return Architecture::vit;
  throw ConfigError("unknown architecture '" + std::string(tag) +
                    "' (expected vanilla-cnn, backbone-head or vit)");
}

int ViTConfig::mlp_hidden() const {
  return static_cast<int>(std::lround(mlp_ratio * latent_dim));
}

Architecture ModelConfig::architecture() const {
  return static_cast<Architecture>(arch.index());
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void validate_head(const ConvHeadConfig& head) {
  require(head.channels > 0 && head.widths[0] > 0 && head.widths[1] > 0,
          "conv head widths must be positive");
}

void validate_arch(const ViTConfig& c) {
  require(c.image_h > 0 && c.image_w > 0, "vit: image size must be positive");
  require(c.patch_size > 0, "vit: patch size must be positive");
  require(c.image_h % c.patch_size == 0 && c.image_w % c.patch_size == 0,
          "vit: patch size " + std::to_string(c.patch_size) + " does not divide " +
              std::to_string(c.image_h) + "x" + std::to_string(c.image_w));
  require(c.latent_dim > 0 && c.num_heads > 0, "vit: latent dim and heads must be positive");
  require(c.latent_dim % c.num_heads == 0,
          "vit: latent dim " + std::to_string(c.latent_dim) +
              " not divisible by " + std::to_string(c.num_heads) + " heads");
  require(c.num_blocks >= 1, "vit: need at least one encoder/decoder block");
  require(c.mlp_ratio > 0.0 && c.mlp_hidden() >= 1, "vit: mlp ratio must be positive");
  require(c.dropout_p >= 0.0 && c.dropout_p < 1.0, "vit: dropout must lie in [0, 1)");
  validate_head(c.head);
}

void validate_arch(const VanillaCNNConfig& c) {
  for (int ch : c.channels) require(ch > 0, "vanilla-cnn: channels must be positive");
  require(c.head_hidden > 0, "vanilla-cnn: head width must be positive");
}

void validate_arch(const BackboneHeadConfig& c) {
  for (int ch : c.channels) require(ch > 0, "backbone-head: channels must be positive");
  validate_head(c.head);
}

json head_to_json(const ConvHeadConfig& h) {
  return {{"channels", h.channels}, {"widths", h.widths}};
}

ConvHeadConfig head_from_json(const json& j) {
  ConvHeadConfig h;
  h.channels = j.value("channels", h.channels);
  h.widths = j.value("widths", h.widths);
  return h;
}

}  // namespace

void validate(const ModelConfig& config) {
  require(config.output_scale > 0.0 && std::isfinite(config.output_scale),
          "output scale must be positive");
  std::visit([](const auto& c) { validate_arch(c); }, config.arch);
}

json config_to_json(const ModelConfig& config) {
  json j;
  j["output_scale"] = config.output_scale;
  if (const auto* v = std::get_if<ViTConfig>(&config.arch)) {
    j["image_h"] = v->image_h;
    j["image_w"] = v->image_w;
    j["patch_size"] = v->patch_size;
    j["latent_dim"] = v->latent_dim;
    j["num_blocks"] = v->num_blocks;
    j["num_heads"] = v->num_heads;
    j["mlp_ratio"] = v->mlp_ratio;
    j["dropout_p"] = v->dropout_p;
    j["head"] = head_to_json(v->head);
  } else if (const auto* c = std::get_if<VanillaCNNConfig>(&config.arch)) {
    j["channels"] = c->channels;
    j["head_hidden"] = c->head_hidden;
  } else if (const auto* b = std::get_if<BackboneHeadConfig>(&config.arch)) {
    j["channels"] = b->channels;
    j["frozen"] = b->frozen;
    j["head"] = head_to_json(b->head);
  }
  return j;
}

ModelConfig config_from_json(Architecture arch, const json& j) {
  ModelConfig config;
  try {
    config.output_scale = j.value("output_scale", 1.0);
    switch (arch) {
      case Architecture::vit: {
        ViTConfig v;
        v.image_h = j.value("image_h", v.image_h);
        v.image_w = j.value("image_w", v.image_w);
        v.patch_size = j.value("patch_size", v.patch_size);
        v.latent_dim = j.value("latent_dim", v.latent_dim);
        v.num_blocks = j.value("num_blocks", v.num_blocks);
        v.num_heads = j.value("num_heads", v.num_heads);
        v.mlp_ratio = j.value("mlp_ratio", v.mlp_ratio);
        v.dropout_p = j.value("dropout_p", v.dropout_p);
        if (j.contains("head")) v.head = head_from_json(j.at("head"));
        config.arch = v;
        break;
      }
      case Architecture::vanilla_cnn: {
        VanillaCNNConfig c;
        c.channels = j.value("channels", c.channels);
        c.head_hidden = j.value("head_hidden", c.head_hidden);
        config.arch = c;
        break;
      }
      case Architecture::backbone_head: {
        BackboneHeadConfig b;
        b.channels = j.value("channels", b.channels);
        b.frozen = j.value("frozen", b.frozen);
        if (j.contains("head")) b.head = head_from_json(j.at("head"));
        config.arch = b;
        break;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return config;
}

}  // namespace scd::models
