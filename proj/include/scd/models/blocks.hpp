#pragma once

#include <random>
#include <string_view>

#include "scd/models/student.hpp"
#include "scd/tensor/tensor.hpp"

namespace scd::models {

template <typename T>
struct AttentionParams {
  Tensor<T> q_weight, q_bias;
  Tensor<T> k_weight, k_bias;
  Tensor<T> v_weight, v_bias;
  Tensor<T> out_weight, out_bias;
};

template <typename T>
struct TransformerBlockParams {
  Tensor<T> norm1_gamma, norm1_beta;
  AttentionParams<T> attn;
  Tensor<T> norm2_gamma, norm2_beta;
  Tensor<T> fc1_weight, fc1_bias;
  Tensor<T> fc2_weight, fc2_bias;
};

template <typename T>
struct ConvHeadParams {
  Tensor<T> expand_weight, expand_bias;  // [d, p*p*c], [p*p*c]
  Tensor<T> conv1_weight, conv1_bias;
  Tensor<T> conv2_weight, conv2_bias;
  Tensor<T> conv3_weight, conv3_bias;
};

struct BlockOptions {
  std::size_t num_heads = 1;
  double dropout_p = 0.0;
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout_p > 0
};

// Full self-attention over x[N, S, d], scores scaled by 1/sqrt(d / heads).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& p,
                               std::size_t num_heads);

// Pre-norm: x + MHA(LN(x)), then + MLP(LN(.)) with GELU and dropout.
template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const TransformerBlockParams<T>& p,
                        const BlockOptions& options);

// Same structure as the encoder block (self-attention only).
template <typename T>
Tensor<T> decoder_block(const Tensor<T>& x, const TransformerBlockParams<T>& p,
                        const BlockOptions& options);

// grid[N, d, gh, gw] -> [N, 3, gh*p, gw*p].
template <typename T>
Tensor<T> conv_head(const Tensor<T>& grid, const ConvHeadParams<T>& p,
                    std::size_t patch);

// Gathers "<prefix>norm1.gamma", "<prefix>attn.q.weight", ... from a model.
template <typename T>
TransformerBlockParams<T> transformer_block_params(const StudentModel<T>& model,
                                                   std::string_view prefix);

template <typename T>
ConvHeadParams<T> conv_head_params(const StudentModel<T>& model,
                                   std::string_view prefix);

}  // namespace scd::models
