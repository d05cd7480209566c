#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "scd/tensor/tape.hpp"
#include "scd/tensor/tensor.hpp"

// Differentiable operators. Each op computes its output eagerly and, when a
// tape is active on this thread and at least one input requires a gradient,
// records its backward rule. Every op output is checked for NaN/Inf and a
// NonFiniteError naming the op is thrown on the first offending value.
namespace scd::ops {

// a[..., m, k] x b[..., k, n] with identical leading dims, or b[k, n] shared
// across all leading dims of a.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x[..., in] x weight[in, out] + bias[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

// Elementwise a + b where b's shape is a suffix of a's shape (b broadcast over
// the leading axes of a).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, double factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// out.shape[i] = x.shape[axes[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);

// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end);

// tokens[N, T, d] with token[d] inserted at position 0 of every sequence.
template <typename T>
Tensor<T> prepend_token(const Tensor<T>& tokens, const Tensor<T>& token);

// Cross-correlation. x[N,C,H,W], weight[F,C,kh,kw], bias[F] (may be
// undefined). (H + 2*padding - kh) must be a multiple of stride.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride, std::size_t padding);

// Normalizes over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps = 1e-5);

// Over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

enum class ActivationKind { relu, gelu, leaky_relu };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double slope = 0.01;  // leaky_relu only, must lie in (0, 1)
};

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation act);

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, {ActivationKind::relu});
}

// tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return activation(x, {ActivationKind::gelu});
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope = 0.01) {
  return activation(x, {ActivationKind::leaky_relu, slope});
}

// Inverted dropout; identity when !training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training,
                  std::mt19937_64& rng);

// x[N,C,H,W] -> [N, (H/p)*(W/p), C*p*p]. Patches are ordered row-major over
// the patch grid; each patch vector is channel-major, then row-major.
template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& x, std::size_t patch);

// Inverse of unfold_patches.
template <typename T>
Tensor<T> fold_patches(const Tensor<T>& patches, std::size_t channels,
                       std::size_t height, std::size_t width,
                       std::size_t patch);

// x[N, C*p*p, h, w] -> [N, C, h*p, w*p];
// out[n, c, y*p+i, x*p+j] = in[n, c*p*p + i*p + j, y, x].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t factor);

// Inverse of pixel_shuffle.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t factor);

// Mean squared componentwise error over pixels whose mask is 1:
// sum_valid sum_c (pred - label)^2 / (C * valid_pixels).
// pred, label: [N, C, H, W]; mask: [N, 1, H, W] with entries in {0, 1}.
// Values at masked-out pixels never influence the result.
template <typename T>
Tensor<T> mse_loss_masked(const Tensor<T>& pred, const Tensor<T>& label,
                          const Tensor<T>& mask);

}  // namespace scd::ops
