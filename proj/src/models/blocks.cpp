#include "scd/models/blocks.hpp"

#include <cmath>
#include <string>

#include "scd/tensor/ops.hpp"

namespace scd::models {

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& p,
                               std::size_t num_heads) {
  if (x.rank() != 3) {
    throw DimensionError("attention expects N x S x d, got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), s = x.dim(1), d = x.dim(2);
  if (num_heads == 0 || d % num_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(num_heads) + " heads");
  }
  const std::size_t dh = d / num_heads;
  auto split = [&](const Tensor<T>& t, std::vector<std::size_t> axes) {
    return ops::permute(ops::reshape(t, {n, s, num_heads, dh}), axes);
  };
  const Tensor<T> q = split(ops::linear(x, p.q_weight, p.q_bias), {0, 2, 1, 3});
  const Tensor<T> k_t = split(ops::linear(x, p.k_weight, p.k_bias), {0, 2, 3, 1});
  const Tensor<T> v = split(ops::linear(x, p.v_weight, p.v_bias), {0, 2, 1, 3});

  Tensor<T> scores = ops::mul_scalar(ops::matmul(q, k_t),
                                     1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor<T> weights = ops::softmax(scores);
  Tensor<T> mixed = ops::matmul(weights, v);  // [n, heads, s, dh]
  mixed = ops::reshape(ops::permute(mixed, {0, 2, 1, 3}), {n, s, d});
  return ops::linear(mixed, p.out_weight, p.out_bias);
}

namespace {

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockParams<T>& p,
                            const BlockOptions& o) {
  const bool drop = o.training && o.dropout_p > 0.0;
  if (drop && o.rng == nullptr) {
    throw ContractError("transformer block: dropout in training mode needs an rng");
  }
  std::mt19937_64 unused;
  std::mt19937_64& rng = o.rng ? *o.rng : unused;

  const Tensor<T> attn = multi_head_attention(
      ops::layer_norm(x, p.norm1_gamma, p.norm1_beta), p.attn, o.num_heads);
  const Tensor<T> h = ops::add(x, attn);

  Tensor<T> m = ops::linear(ops::layer_norm(h, p.norm2_gamma, p.norm2_beta),
                            p.fc1_weight, p.fc1_bias);
  m = ops::dropout(ops::gelu(m), o.dropout_p, o.training, rng);
  m = ops::dropout(ops::linear(m, p.fc2_weight, p.fc2_bias), o.dropout_p,
                   o.training, rng);
  return ops::add(h, m);
}

}  // namespace

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const TransformerBlockParams<T>& p,
                        const BlockOptions& options) {
  return transformer_block(x, p, options);
}

template <typename T>
Tensor<T> decoder_block(const Tensor<T>& x, const TransformerBlockParams<T>& p,
                        const BlockOptions& options) {
  return transformer_block(x, p, options);
}

template <typename T>
Tensor<T> conv_head(const Tensor<T>& grid, const ConvHeadParams<T>& p,
                    std::size_t patch) {
  if (grid.rank() != 4) {
    throw DimensionError("conv head expects N x d x h x w, got " +
                         shape_string(grid.shape()));
  }
  Tensor<T> tokens = ops::permute(grid, {0, 2, 3, 1});  // [n, gh, gw, d]
  tokens = ops::linear(tokens, p.expand_weight, p.expand_bias);
  Tensor<T> y = ops::pixel_shuffle(ops::permute(tokens, {0, 3, 1, 2}), patch);
  y = ops::leaky_relu(ops::conv2d(y, p.conv1_weight, p.conv1_bias, 1, 1));
  y = ops::leaky_relu(ops::conv2d(y, p.conv2_weight, p.conv2_bias, 1, 1));
  return ops::conv2d(y, p.conv3_weight, p.conv3_bias, 1, 1);
}

template <typename T>
TransformerBlockParams<T> transformer_block_params(const StudentModel<T>& model,
                                                   std::string_view prefix) {
  const std::string base(prefix);
  auto get = [&](const char* name) { return model.parameter(base + name); };
  TransformerBlockParams<T> p;
  p.norm1_gamma = get("norm1.gamma");
  p.norm1_beta = get("norm1.beta");
  p.attn.q_weight = get("attn.q.weight");
  p.attn.q_bias = get("attn.q.bias");
  p.attn.k_weight = get("attn.k.weight");
  p.attn.k_bias = get("attn.k.bias");
  p.attn.v_weight = get("attn.v.weight");
  p.attn.v_bias = get("attn.v.bias");
  p.attn.out_weight = get("attn.out.weight");
  p.attn.out_bias = get("attn.out.bias");
  p.norm2_gamma = get("norm2.gamma");
  p.norm2_beta = get("norm2.beta");
  p.fc1_weight = get("mlp.fc1.weight");
  p.fc1_bias = get("mlp.fc1.bias");
  p.fc2_weight = get("mlp.fc2.weight");
  p.fc2_bias = get("mlp.fc2.bias");
  return p;
}

template <typename T>
ConvHeadParams<T> conv_head_params(const StudentModel<T>& model,
                                   std::string_view prefix) {
  const std::string base(prefix);
  auto get = [&](const char* name) { return model.parameter(base + name); };
  ConvHeadParams<T> p;
  p.expand_weight = get("expand.weight");
  p.expand_bias = get("expand.bias");
  p.conv1_weight = get("conv1.weight");
  p.conv1_bias = get("conv1.bias");
  p.conv2_weight = get("conv2.weight");
  p.conv2_bias = get("conv2.bias");
  p.conv3_weight = get("conv3.weight");
  p.conv3_bias = get("conv3.bias");
  return p;
}

#define SCD_INSTANTIATE_BLOCKS(T)                                                  \
  template Tensor<T> multi_head_attention(const Tensor<T>&,                        \
                                          const AttentionParams<T>&, std::size_t); \
  template Tensor<T> encoder_block(const Tensor<T>&,                               \
                                   const TransformerBlockParams<T>&,               \
                                   const BlockOptions&);                           \
  template Tensor<T> decoder_block(const Tensor<T>&,                               \
                                   const TransformerBlockParams<T>&,               \
                                   const BlockOptions&);                           \
  template Tensor<T> conv_head(const Tensor<T>&, const ConvHeadParams<T>&,         \
                               std::size_t);                                       \
  template TransformerBlockParams<T> transformer_block_params(                     \
      const StudentModel<T>&, std::string_view);                                   \
  template ConvHeadParams<T> conv_head_params(const StudentModel<T>&,              \
                                              std::string_view);

SCD_INSTANTIATE_BLOCKS(float)
SCD_INSTANTIATE_BLOCKS(double)

#undef SCD_INSTANTIATE_BLOCKS

}  // namespace scd::models
