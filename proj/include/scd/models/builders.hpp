#pragma once

#include <filesystem>
#include <optional>
#include <random>

#include "scd/models/config.hpp"
#include "scd/models/student.hpp"
#include "scd/tensor/tensor.hpp"

namespace scd::models {

// All builders validate the config (ConfigError) and draw every initial value
// from `rng` in a fixed order, so equal (config, seed) gives identical models.
template <typename T>
StudentModel<T> build_vit(const ViTConfig& cfg, std::mt19937_64& rng,
                          double output_scale = 1.0);

template <typename T>
StudentModel<T> build_vanilla_cnn(const VanillaCNNConfig& cfg, std::mt19937_64& rng,
                                  double output_scale = 1.0);

// Backbone parameters come from `weights` (a checkpoint file) when given;
// backbone tensors get requires_grad=false when cfg.frozen.
template <typename T>
StudentModel<T> build_backbone_head(const BackboneHeadConfig& cfg,
                                    const std::optional<std::filesystem::path>& weights,
                                    std::mt19937_64& rng, double output_scale = 1.0);

template <typename T>
StudentModel<T> build_model(const ModelConfig& config, std::mt19937_64& rng);

// x[N, 3, H, W] -> [N, 3, H, W], multiplied by config().output_scale.
// `rng` drives dropout and must be non-null when training a ViT with dropout.
template <typename T>
Tensor<T> vit_forward(const StudentModel<T>& model, const Tensor<T>& x, bool training,
                      std::mt19937_64* rng = nullptr);

template <typename T>
Tensor<T> cnn_forward(const StudentModel<T>& model, const Tensor<T>& x, bool training);

template <typename T>
Tensor<T> backbone_head_forward(const StudentModel<T>& model, const Tensor<T>& x,
                                bool training);

// Dispatches on the model's architecture.
template <typename T>
Tensor<T> forward(const StudentModel<T>& model, const Tensor<T>& x, bool training,
                  std::mt19937_64* rng = nullptr);

}  // namespace scd::models
