#include "scd/models/builders.hpp"

#include <cmath>
#include <string>

#include "scd/errors.hpp"
#include "scd/models/blocks.hpp"
#include "scd/models/checkpoint.hpp"
#include "scd/tensor/ops.hpp"

namespace scd::models {

namespace {

template <typename T>
Tensor<T> make_param(const Shape& shape) {
  Tensor<T> t = Tensor<T>::zeros(shape);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                         std::mt19937_64& rng) {
  Tensor<T> t = make_param<T>(shape);
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> he_normal(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t = make_param<T>(shape);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  return t;
}

// Normal(0, sigma) resampled until it lands within two standard deviations.
template <typename T>
Tensor<T> trunc_normal(const Shape& shape, double sigma, std::mt19937_64& rng) {
  Tensor<T> t = make_param<T>(shape);
  std::normal_distribution<double> dist(0.0, sigma);
  for (T& v : t.mutable_data()) {
    double s = dist(rng);
    while (std::abs(s) > 2.0 * sigma) s = dist(rng);
    v = static_cast<T>(s);
  }
  return t;
}

template <typename T>
Tensor<T> constant_param(const Shape& shape, double value) {
  Tensor<T> t = make_param<T>(shape);
  for (T& v : t.mutable_data()) v = static_cast<T>(value);
  return t;
}

std::size_t u(int v) { return static_cast<std::size_t>(v); }

template <typename T>
void add_linear(StudentModel<T>& m, const std::string& name, std::size_t in,
                std::size_t out, std::mt19937_64& rng) {
  m.add_parameter(name + ".weight", xavier_uniform<T>({in, out}, in, out, rng));
  m.add_parameter(name + ".bias", make_param<T>({out}));
}

template <typename T>
void add_conv(StudentModel<T>& m, const std::string& name, std::size_t in,
              std::size_t out, std::size_t k, std::mt19937_64& rng) {
  m.add_parameter(name + ".weight", he_normal<T>({out, in, k, k}, in * k * k, rng));
  m.add_parameter(name + ".bias", make_param<T>({out}));
}

template <typename T>
void add_layer_norm(StudentModel<T>& m, const std::string& name, std::size_t d) {
  m.add_parameter(name + ".gamma", constant_param<T>({d}, 1.0));
  m.add_parameter(name + ".beta", make_param<T>({d}));
}

template <typename T>
void add_transformer_block(StudentModel<T>& m, const std::string& prefix, std::size_t d,
                           std::size_t hidden, std::mt19937_64& rng) {
  add_layer_norm(m, prefix + "norm1", d);
  for (const char* proj : {"q", "k", "v", "out"}) {
    add_linear(m, prefix + "attn." + proj, d, d, rng);
  }
  add_layer_norm(m, prefix + "norm2", d);
  add_linear(m, prefix + "mlp.fc1", d, hidden, rng);
  add_linear(m, prefix + "mlp.fc2", hidden, d, rng);
}

template <typename T>
void add_conv_head(StudentModel<T>& m, const std::string& prefix, const ConvHeadConfig& h,
                   std::size_t in_dim, std::size_t patch, std::mt19937_64& rng) {
  add_linear(m, prefix + "expand", in_dim, patch * patch * u(h.channels), rng);
  add_conv(m, prefix + "conv1", u(h.channels), u(h.widths[0]), 3, rng);
  add_conv(m, prefix + "conv2", u(h.widths[0]), u(h.widths[1]), 3, rng);
  add_conv(m, prefix + "conv3", u(h.widths[1]), 3, 3, rng);
}

constexpr std::size_t kBackboneStride = 8;  // three stride-2 stages

void check_input(const Shape& s, const char* who) {
  if (s.size() != 4 || s[1] != 3) {
    throw DimensionError(std::string(who) + ": expected N x 3 x H x W input, got " +
                         shape_string(s));
  }
}

template <typename T>
Tensor<T> apply_output_scale(const StudentModel<T>& model, const Tensor<T>& y) {
  const double s = model.config().output_scale;
  return s == 1.0 ? y : ops::mul_scalar(y, s);
}

}  // namespace

template <typename T>
StudentModel<T> build_vit(const ViTConfig& cfg, std::mt19937_64& rng, double output_scale) {
  ModelConfig config;
  config.arch = cfg;
  config.output_scale = output_scale;
  validate(config);

  StudentModel<T> m(config);
  const std::size_t d = u(cfg.latent_dim), p = u(cfg.patch_size);
  const std::size_t patch_dim = 3 * p * p;
  add_linear(m, "patch_embed", patch_dim, d, rng);
  m.add_parameter("cls_token", trunc_normal<T>({d}, 0.02, rng));
  m.add_parameter("pos_embed", trunc_normal<T>({u(cfg.tokens()) + 1, d}, 0.02, rng));
  for (int i = 0; i < cfg.num_blocks; ++i) {
    add_transformer_block(m, "encoder." + std::to_string(i) + ".", d, u(cfg.mlp_hidden()), rng);
  }
  for (int i = 0; i < cfg.num_blocks; ++i) {
    add_transformer_block(m, "decoder." + std::to_string(i) + ".", d, u(cfg.mlp_hidden()), rng);
  }
  add_layer_norm(m, "decoder_norm", d);
  add_conv_head(m, "head.", cfg.head, d, p, rng);
  return m;
}

template <typename T>
StudentModel<T> build_vanilla_cnn(const VanillaCNNConfig& cfg, std::mt19937_64& rng,
                                  double output_scale) {
  ModelConfig config;
  config.arch = cfg;
  config.output_scale = output_scale;
  validate(config);

  StudentModel<T> m(config);
  std::size_t prev = 3;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    add_conv(m, "features." + std::to_string(i), prev, u(cfg.channels[i]), 3, rng);
    prev = u(cfg.channels[i]);
  }
  add_conv(m, "head.fc1", prev, u(cfg.head_hidden), 1, rng);
  add_conv(m, "head.fc2", u(cfg.head_hidden), 3, 1, rng);
  return m;
}

template <typename T>
StudentModel<T> build_backbone_head(const BackboneHeadConfig& cfg,
                                    const std::optional<std::filesystem::path>& weights,
                                    std::mt19937_64& rng, double output_scale) {
  ModelConfig config;
  config.arch = cfg;
  config.output_scale = output_scale;
  validate(config);

  StudentModel<T> m(config);
  std::size_t prev = 3;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    add_conv(m, "backbone.stage" + std::to_string(i), prev, u(cfg.channels[i]), 4, rng);
    prev = u(cfg.channels[i]);
  }
  add_conv_head(m, "head.", cfg.head, prev, kBackboneStride, rng);
  if (weights) load_backbone_weights(m, *weights);
  if (cfg.frozen) set_frozen(m, "backbone.", true);
  return m;
}

template <typename T>
StudentModel<T> build_model(const ModelConfig& config, std::mt19937_64& rng) {
  switch (config.architecture()) {
    case Architecture::vit:
      return build_vit<T>(std::get<ViTConfig>(config.arch), rng, config.output_scale);
    case Architecture::vanilla_cnn:
      return build_vanilla_cnn<T>(std::get<VanillaCNNConfig>(config.arch), rng,
                                  config.output_scale);
    case Architecture::backbone_head:
      return build_backbone_head<T>(std::get<BackboneHeadConfig>(config.arch), std::nullopt,
                                    rng, config.output_scale);
  }
  throw ConfigError("unknown architecture");
}

template <typename T>
Tensor<T> vit_forward(const StudentModel<T>& model, const Tensor<T>& x, bool training,
                      std::mt19937_64* rng) {
  const auto* cfg = std::get_if<ViTConfig>(&model.config().arch);
  if (!cfg) throw ConfigError("vit_forward called on a " +
                              std::string(to_string(model.architecture())) + " model");
  check_input(x.shape(), "vit");
  if (x.dim(2) != u(cfg->image_h) || x.dim(3) != u(cfg->image_w)) {
    throw ConfigError("vit: input is " + std::to_string(x.dim(2)) + "x" +
                      std::to_string(x.dim(3)) + " but the model expects " +
                      std::to_string(cfg->image_h) + "x" + std::to_string(cfg->image_w));
  }
  const std::size_t n = x.dim(0), p = u(cfg->patch_size), d = u(cfg->latent_dim);
  const std::size_t gh = u(cfg->grid_h()), gw = u(cfg->grid_w()), t = u(cfg->tokens());

  Tensor<T> h = ops::unfold_patches(x, p);
  h = ops::linear(h, model.parameter("patch_embed.weight"), model.parameter("patch_embed.bias"));
  h = ops::prepend_token(h, model.parameter("cls_token"));
  h = ops::add(h, model.parameter("pos_embed"));

  BlockOptions opts;
  opts.num_heads = u(cfg->num_heads);
  opts.dropout_p = cfg->dropout_p;
  opts.training = training;
  opts.rng = rng;
  for (int i = 0; i < cfg->num_blocks; ++i) {
    h = encoder_block(h, transformer_block_params(model, "encoder." + std::to_string(i) + "."),
                      opts);
  }
  for (int i = 0; i < cfg->num_blocks; ++i) {
    h = decoder_block(h, transformer_block_params(model, "decoder." + std::to_string(i) + "."),
                      opts);
  }
  h = ops::layer_norm(h, model.parameter("decoder_norm.gamma"),
                      model.parameter("decoder_norm.beta"));

  // Drop the class token; the remaining T tokens form the patch grid.
  h = ops::slice(h, 1, 1, t + 1);
  h = ops::permute(ops::reshape(h, {n, gh, gw, d}), {0, 3, 1, 2});
  return apply_output_scale(model, conv_head(h, conv_head_params(model, "head."), p));
}

template <typename T>
Tensor<T> cnn_forward(const StudentModel<T>& model, const Tensor<T>& x, bool /*training*/) {
  const auto* cfg = std::get_if<VanillaCNNConfig>(&model.config().arch);
  if (!cfg) throw ConfigError("cnn_forward called on a " +
                              std::string(to_string(model.architecture())) + " model");
  check_input(x.shape(), "vanilla-cnn");
  Tensor<T> h = x;
  for (std::size_t i = 0; i < cfg->channels.size(); ++i) {
    const std::string name = "features." + std::to_string(i);
    h = ops::relu(ops::conv2d(h, model.parameter(name + ".weight"),
                              model.parameter(name + ".bias"), 1, 1));
  }
  h = ops::relu(ops::conv2d(h, model.parameter("head.fc1.weight"),
                            model.parameter("head.fc1.bias"), 1, 0));
  h = ops::conv2d(h, model.parameter("head.fc2.weight"), model.parameter("head.fc2.bias"), 1, 0);
  return apply_output_scale(model, h);
}

template <typename T>
Tensor<T> backbone_head_forward(const StudentModel<T>& model, const Tensor<T>& x,
                                bool /*training*/) {
  const auto* cfg = std::get_if<BackboneHeadConfig>(&model.config().arch);
  if (!cfg) throw ConfigError("backbone_head_forward called on a " +
                              std::string(to_string(model.architecture())) + " model");
  check_input(x.shape(), "backbone-head");
  if (x.dim(2) % kBackboneStride != 0 || x.dim(3) % kBackboneStride != 0) {
    throw ConfigError("backbone-head: input " + std::to_string(x.dim(2)) + "x" +
                      std::to_string(x.dim(3)) + " is not a multiple of 8");
  }
  Tensor<T> h = x;
  for (std::size_t i = 0; i < cfg->channels.size(); ++i) {
    const std::string name = "backbone.stage" + std::to_string(i);
    h = ops::relu(ops::conv2d(h, model.parameter(name + ".weight"),
                              model.parameter(name + ".bias"), 2, 1));
  }
  return apply_output_scale(model,
                            conv_head(h, conv_head_params(model, "head."), kBackboneStride));
}

template <typename T>
Tensor<T> forward(const StudentModel<T>& model, const Tensor<T>& x, bool training,
                  std::mt19937_64* rng) {
  switch (model.architecture()) {
    case Architecture::vit:
      return vit_forward(model, x, training, rng);
    case Architecture::vanilla_cnn:
      return cnn_forward(model, x, training);
    case Architecture::backbone_head:
      return backbone_head_forward(model, x, training);
  }
  throw ConfigError("unknown architecture");
}

#define SCD_INSTANTIATE_BUILDERS(T)                                                        \
  template StudentModel<T> build_vit<T>(const ViTConfig&, std::mt19937_64&, double);       \
  template StudentModel<T> build_vanilla_cnn<T>(const VanillaCNNConfig&, std::mt19937_64&, \
                                                double);                                   \
  template StudentModel<T> build_backbone_head<T>(                                         \
      const BackboneHeadConfig&, const std::optional<std::filesystem::path>&,              \
      std::mt19937_64&, double);                                                           \
  template StudentModel<T> build_model<T>(const ModelConfig&, std::mt19937_64&);           \
  template Tensor<T> vit_forward(const StudentModel<T>&, const Tensor<T>&, bool,           \
                                 std::mt19937_64*);                                        \
  template Tensor<T> cnn_forward(const StudentModel<T>&, const Tensor<T>&, bool);          \
  template Tensor<T> backbone_head_forward(const StudentModel<T>&, const Tensor<T>&, bool); \
  template Tensor<T> forward(const StudentModel<T>&, const Tensor<T>&, bool,               \
                             std::mt19937_64*);

SCD_INSTANTIATE_BUILDERS(float)
SCD_INSTANTIATE_BUILDERS(double)

#undef SCD_INSTANTIATE_BUILDERS

}  // namespace scd::models
