#include "scd/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace scd::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c[m,n] (+)= op(a)[m,k] * op(b)[k,n], all buffers row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  using Index = Eigen::Index;
  const auto mi = static_cast<Index>(m);
  const auto ni = static_cast<Index>(n);
  const auto ki = static_cast<Index>(k);
  Eigen::Map<const RowMat<T>> A(a, trans_a ? ki : mi, trans_a ? mi : ki);
  Eigen::Map<const RowMat<T>> B(b, trans_b ? ni : ki, trans_b ? ki : ni);
  Eigen::Map<RowMat<T>> C(c, mi, ni);
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

template <typename T>
Tape<T>* tape_for(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
Tensor<T> make_output(std::string_view op, Shape shape, std::vector<T> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NonFiniteError(std::string(op) + ": non-finite output at flat index " +
                           std::to_string(i) + " of " + shape_string(shape));
    }
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T, typename Fn>
void record(Tape<T>* tape, std::string_view op,
            std::vector<typename Tape<T>::ImplPtr> inputs, Tensor<T>& out,
            Fn&& fn) {
  out.set_requires_grad(true);
  tape->record(op, std::move(inputs), out.impl(),
               std::function<void()>(std::forward<Fn>(fn)));
}

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op, const char* what) {
  if (!t.defined()) {
    throw ContractError(std::string(op) + ": " + what + " is undefined");
  }
}

// Calls fn(out_flat, in_flat) for every element of permute(x, axes).
template <typename Fn>
void for_each_permuted(const Shape& in_shape,
                       const std::vector<std::size_t>& axes, Fn&& fn) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) {
    in_stride[i - 1] = in_stride[i] * in_shape[i];
  }
  std::vector<std::size_t> out_shape(rank), step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_stride[axes[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t in_flat = 0;
  for (std::size_t out_flat = 0; out_flat < n; ++out_flat) {
    fn(out_flat, in_flat);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        in_flat += step[d];
        break;
      }
      in_flat -= step[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* cols) {
  const auto H = static_cast<long>(height);
  const auto W = static_cast<long>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = cols + ((c * kh + i) * kw + j) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src = x + (c * height + static_cast<std::size_t>(iy)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= W) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height,
                std::size_t width, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t out_h,
                std::size_t out_w, T* dx) {
  const auto H = static_cast<long>(height);
  const auto W = static_cast<long>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = cols + ((c * kh + i) * kw + j) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          if (iy < 0 || iy >= H) continue;
          T* dst = dx + (c * height + static_cast<std::size_t>(iy)) * width;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "matmul", "lhs");
  require_defined(b, "matmul", "rhs");
  require(a.rank() >= 2 && b.rank() >= 2,
          "matmul: operands must have rank >= 2, got " + shape_string(a.shape()) +
              " and " + shape_string(b.shape()));
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  require(b.dim(b.rank() - 2) == k, "matmul: inner dimensions differ: " +
                                        shape_string(a.shape()) + " x " +
                                        shape_string(b.shape()));
  const bool shared_rhs = b.rank() == 2;
  if (!shared_rhs) {
    require(a.rank() == b.rank() &&
                std::equal(a.shape().begin(), a.shape().end() - 2,
                           b.shape().begin()),
            "matmul: leading dimensions differ: " + shape_string(a.shape()) +
                " x " + shape_string(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  const std::size_t rows = a.numel() / k;
  std::vector<T> out(rows * n);
  const std::size_t batch = shared_rhs ? 1 : a.numel() / (m * k);
  const std::size_t block_m = shared_rhs ? rows : m;
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(false, false, block_m, n, k, pa + i * block_m * k,
         pb + (shared_rhs ? 0 : i * k * n), out.data() + i * block_m * n, false);
  }
  Tensor<T> result = make_output("matmul", std::move(out_shape), std::move(out));
  if (auto* tape = tape_for({&a, &b})) {
    record(tape, "matmul", {a.impl(), b.impl()}, result,
           [ai = a.impl().get(), bi = b.impl().get(), o = result.impl().get(),
            batch, block_m, n, k, shared_rhs] {
             for (std::size_t i = 0; i < batch; ++i) {
               const T* dc = o->grad.data() + i * block_m * n;
               const std::size_t b_off = shared_rhs ? 0 : i * k * n;
               if (ai->requires_grad) {
                 gemm(false, true, block_m, k, n, dc, bi->data.data() + b_off,
                      ai->ensure_grad().data() + i * block_m * k, true);
               }
               if (bi->requires_grad) {
                 gemm(true, false, k, n, block_m, ai->data.data() + i * block_m * k,
                      dc, bi->ensure_grad().data() + b_off, true);
               }
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require_defined(weight, "linear", "weight");
  require(weight.rank() == 2, "linear: weight must be 2-D, got " +
                                  shape_string(weight.shape()));
  Tensor<T> y = matmul(x, weight);
  if (!bias.defined()) return y;
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(1),
          "linear: bias " + shape_string(bias.shape()) + " does not match weight " +
              shape_string(weight.shape()));
  return add(y, bias);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "add", "lhs");
  require_defined(b, "add", "rhs");
  require(b.rank() <= a.rank() &&
              std::equal(b.shape().begin(), b.shape().end(),
                         a.shape().end() - static_cast<long>(b.rank())),
          "add: " + shape_string(b.shape()) + " is not a suffix of " +
              shape_string(a.shape()));
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o) {
    T* row = out.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) row[i] += bd[i];
  }
  Tensor<T> result = make_output("add", a.shape(), std::move(out));
  if (auto* tape = tape_for({&a, &b})) {
    record(tape, "add", {a.impl(), b.impl()}, result,
           [ai = a.impl().get(), bi = b.impl().get(), o = result.impl().get(),
            inner, outer] {
             const auto& g = o->grad;
             if (ai->requires_grad) {
               auto& ga = ai->ensure_grad();
               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
             }
             if (bi->requires_grad) {
               auto& gb = bi->ensure_grad();
               for (std::size_t r = 0; r < outer; ++r) {
                 const T* row = g.data() + r * inner;
                 for (std::size_t i = 0; i < inner; ++i) gb[i] += row[i];
               }
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, double factor) {
  require_defined(x, "mul_scalar", "input");
  const T f = static_cast<T>(factor);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * f;
  Tensor<T> result = make_output("mul_scalar", x.shape(), std::move(out));
  if (auto* tape = tape_for({&x})) {
    record(tape, "mul_scalar", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get(), f] {
             auto& gx = xi->ensure_grad();
             for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i] * f;
           });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum", "input");
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  Tensor<T> result = make_output<T>("sum", {1}, {static_cast<T>(acc)});
  if (auto* tape = tape_for({&x})) {
    record(tape, "sum", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get()] {
             auto& gx = xi->ensure_grad();
             const T g = o->grad[0];
             for (auto& v : gx) v += g;
           });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x, "reshape", "input");
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_string(x.shape()) + " as " +
              shape_string(shape));
  Tensor<T> result(std::move(shape),
                   std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = tape_for({&x})) {
    record(tape, "reshape", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get()] {
             auto& gx = xi->ensure_grad();
             for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i];
           });
  }
  return result;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute", "input");
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(x.rank());
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  require(sorted == iota, "permute: axes are not a permutation of rank " +
                              std::to_string(x.rank()));
  Shape out_shape(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for_each_permuted(x.shape(), axes,
                    [&](std::size_t o, std::size_t i) { out[o] = xd[i]; });
  Tensor<T> result(std::move(out_shape), std::move(out));
  if (auto* tape = tape_for({&x})) {
    record(tape, "permute", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get(), axes] {
             auto& gx = xi->ensure_grad();
             const auto& g = o->grad;
             for_each_permuted(xi->shape, axes, [&](std::size_t out_i,
                                                    std::size_t in_i) {
               gx[in_i] += g[out_i];
             });
           });
  }
  return result;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  require_defined(x, "slice", "input");
  require(axis < x.rank() && begin < end && end <= x.dim(axis),
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
              ") on axis " + std::to_string(axis) + " of " +
              shape_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t extent = x.dim(axis);
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xd.begin() + static_cast<long>((o * extent + begin) * inner),
                len * inner, out.begin() + static_cast<long>(o * len * inner));
  }
  Tensor<T> result(std::move(out_shape), std::move(out));
  if (auto* tape = tape_for({&x})) {
    record(tape, "slice", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get(), outer, inner, extent,
            begin, len] {
             auto& gx = xi->ensure_grad();
             for (std::size_t r = 0; r < outer; ++r) {
               const T* src = o->grad.data() + r * len * inner;
               T* dst = gx.data() + (r * extent + begin) * inner;
               for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> prepend_token(const Tensor<T>& tokens, const Tensor<T>& token) {
  require_defined(tokens, "prepend_token", "tokens");
  require_defined(token, "prepend_token", "token");
  require(tokens.rank() == 3 && token.numel() == tokens.dim(2),
          "prepend_token: token " + shape_string(token.shape()) +
              " does not fit sequence " + shape_string(tokens.shape()));
  const std::size_t n = tokens.dim(0), t = tokens.dim(1), d = tokens.dim(2);
  std::vector<T> out(n * (t + 1) * d);
  const auto td = tokens.data();
  const auto kd = token.data();
  for (std::size_t b = 0; b < n; ++b) {
    T* dst = out.data() + b * (t + 1) * d;
    std::copy(kd.begin(), kd.end(), dst);
    std::copy_n(td.begin() + static_cast<long>(b * t * d), t * d, dst + d);
  }
  Tensor<T> result({n, t + 1, d}, std::move(out));
  if (auto* tape = tape_for({&tokens, &token})) {
    record(tape, "prepend_token", {tokens.impl(), token.impl()}, result,
           [si = tokens.impl().get(), ki = token.impl().get(),
            o = result.impl().get(), n, t, d] {
             for (std::size_t b = 0; b < n; ++b) {
               const T* src = o->grad.data() + b * (t + 1) * d;
               if (ki->requires_grad) {
                 auto& gk = ki->ensure_grad();
                 for (std::size_t i = 0; i < d; ++i) gk[i] += src[i];
               }
               if (si->requires_grad) {
                 T* dst = si->ensure_grad().data() + b * t * d;
                 for (std::size_t i = 0; i < t * d; ++i) dst[i] += src[d + i];
               }
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  require_defined(x, "conv2d", "input");
  require_defined(weight, "conv2d", "weight");
  require(x.rank() == 4 && weight.rank() == 4 && weight.dim(1) == x.dim(1),
          "conv2d: input " + shape_string(x.shape()) + " and weight " +
              shape_string(weight.shape()) + " are incompatible");
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == F,
            "conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                std::to_string(F) + " filters");
  }
  const std::size_t span_h = H + 2 * padding;
  const std::size_t span_w = W + 2 * padding;
  if (kh > span_h || kw > span_w) {
    throw ConfigError("conv2d: kernel " + std::to_string(kh) + "x" +
                      std::to_string(kw) + " larger than padded input " +
                      std::to_string(span_h) + "x" + std::to_string(span_w));
  }
  if ((span_h - kh) % stride != 0 || (span_w - kw) % stride != 0) {
    throw ConfigError("conv2d: output extent is not integral for input " +
                      std::to_string(H) + "x" + std::to_string(W) + ", kernel " +
                      std::to_string(kh) + "x" + std::to_string(kw) +
                      ", stride " + std::to_string(stride) + ", padding " +
                      std::to_string(padding));
  }
  const std::size_t Ho = (span_h - kh) / stride + 1;
  const std::size_t Wo = (span_w - kw) / stride + 1;
  const std::size_t K = C * kh * kw;
  const std::size_t P = Ho * Wo;

  std::vector<T> out(N * F * P);
  std::vector<T> cols(K * P);
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    im2col(xd + n * C * H * W, C, H, W, kh, kw, stride, padding, Ho, Wo,
           cols.data());
    T* y = out.data() + n * F * P;
    if (bias.defined()) {
      const auto bd = bias.data();
      for (std::size_t f = 0; f < F; ++f) std::fill_n(y + f * P, P, bd[f]);
    }
    gemm(false, false, F, P, K, wd, cols.data(), y, bias.defined());
  }
  Tensor<T> result = make_output("conv2d", {N, F, Ho, Wo}, std::move(out));
  if (auto* tape = tape_for({&x, &weight, &bias})) {
    auto* bi = bias.defined() ? bias.impl().get() : nullptr;
    std::vector<typename Tape<T>::ImplPtr> inputs{x.impl(), weight.impl()};
    if (bi) inputs.push_back(bias.impl());
    record(tape, "conv2d", std::move(inputs), result,
           [xi = x.impl().get(), wi = weight.impl().get(), bi,
            o = result.impl().get(), N, C, H, W, F, kh, kw, stride, padding, Ho,
            Wo, K, P] {
             std::vector<T> cols(K * P);
             std::vector<T> dcols;
             if (xi->requires_grad) dcols.resize(K * P);
             for (std::size_t n = 0; n < N; ++n) {
               const T* dy = o->grad.data() + n * F * P;
               if (bi && bi->requires_grad) {
                 auto& gb = bi->ensure_grad();
                 for (std::size_t f = 0; f < F; ++f) {
                   T acc{0};
                   for (std::size_t p = 0; p < P; ++p) acc += dy[f * P + p];
                   gb[f] += acc;
                 }
               }
               if (wi->requires_grad) {
                 im2col(xi->data.data() + n * C * H * W, C, H, W, kh, kw, stride,
                        padding, Ho, Wo, cols.data());
                 gemm(false, true, F, K, P, dy, cols.data(),
                      wi->ensure_grad().data(), true);
               }
               if (xi->requires_grad) {
                 gemm(true, false, K, P, F, wi->data.data(), dy, dcols.data(),
                      false);
                 col2im_add(dcols.data(), C, H, W, kh, kw, stride, padding, Ho,
                            Wo, xi->ensure_grad().data() + n * C * H * W);
               }
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps) {
  require_defined(x, "layer_norm", "input");
  require(x.rank() >= 1 && x.shape().back() > 0,
          "layer_norm: input needs a non-empty last axis");
  const std::size_t d = x.shape().back();
  require(gamma.defined() && beta.defined() && gamma.numel() == d &&
              beta.numel() == d,
          "layer_norm: gamma/beta must have " + std::to_string(d) + " elements");
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<double> rstd(rows);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = row[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const T h = static_cast<T>((row[i] - mu) * rstd[r]);
      xhat[r * d + i] = h;
      out[r * d + i] = gd[i] * h + bd[i];
    }
  }
  Tensor<T> result = make_output("layer_norm", x.shape(), std::move(out));
  if (auto* tape = tape_for({&x, &gamma, &beta})) {
    record(tape, "layer_norm", {x.impl(), gamma.impl(), beta.impl()}, result,
           [xi = x.impl().get(), gi = gamma.impl().get(), bi = beta.impl().get(),
            o = result.impl().get(), xhat = std::move(xhat),
            rstd = std::move(rstd), rows, d] {
             const auto& g = o->grad;
             if (gi->requires_grad) {
               auto& gg = gi->ensure_grad();
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t i = 0; i < d; ++i) {
                   gg[i] += g[r * d + i] * xhat[r * d + i];
                 }
               }
             }
             if (bi->requires_grad) {
               auto& gb = bi->ensure_grad();
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
               }
             }
             if (!xi->requires_grad) return;
             auto& gx = xi->ensure_grad();
             const auto& gamma_d = gi->data;
             for (std::size_t r = 0; r < rows; ++r) {
               double mean_dh = 0.0, mean_dh_h = 0.0;
               for (std::size_t i = 0; i < d; ++i) {
                 const double dh = static_cast<double>(g[r * d + i]) * gamma_d[i];
                 mean_dh += dh;
                 mean_dh_h += dh * xhat[r * d + i];
               }
               mean_dh /= static_cast<double>(d);
               mean_dh_h /= static_cast<double>(d);
               for (std::size_t i = 0; i < d; ++i) {
                 const double dh = static_cast<double>(g[r * d + i]) * gamma_d[i];
                 gx[r * d + i] += static_cast<T>(
                     rstd[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_h));
               }
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require_defined(x, "softmax", "input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    T* dst = out.data() + r * n;
    const T peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = std::exp(row[i] - peak);
      total += dst[i];
    }
    const double inv = 1.0 / total;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(dst[i] * inv);
  }
  Tensor<T> result = make_output("softmax", x.shape(), std::move(out));
  if (auto* tape = tape_for({&x})) {
    record(tape, "softmax", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get(), rows, n] {
             auto& gx = xi->ensure_grad();
             const auto& y = o->data;
             const auto& g = o->grad;
             for (std::size_t r = 0; r < rows; ++r) {
               double dot = 0.0;
               for (std::size_t i = 0; i < n; ++i) {
                 dot += static_cast<double>(g[r * n + i]) * y[r * n + i];
               }
               for (std::size_t i = 0; i < n; ++i) {
                 gx[r * n + i] += static_cast<T>(y[r * n + i] * (g[r * n + i] - dot));
               }
             }
           });
  }
  return result;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluK = 0.044715;

double activate(double v, const Activation& act) {
  switch (act.kind) {
    case ActivationKind::relu:
      return v > 0.0 ? v : 0.0;
    case ActivationKind::leaky_relu:
      return v > 0.0 ? v : act.slope * v;
    case ActivationKind::gelu:
      return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluK * v * v * v)));
  }
  return v;
}

double activate_grad(double v, const Activation& act) {
  switch (act.kind) {
    case ActivationKind::relu:
      return v > 0.0 ? 1.0 : 0.0;
    case ActivationKind::leaky_relu:
      return v > 0.0 ? 1.0 : act.slope;
    case ActivationKind::gelu: {
      const double u = kGeluC * (v + kGeluK * v * v * v);
      const double t = std::tanh(u);
      return 0.5 * (1.0 + t) +
             0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
    }
  }
  return 1.0;
}

}  // namespace

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation act) {
  require_defined(x, "activation", "input");
  if (act.kind == ActivationKind::leaky_relu &&
      !(act.slope > 0.0 && act.slope < 1.0)) {
    throw ConfigError("leaky_relu: slope must lie in (0, 1), got " +
                      std::to_string(act.slope));
  }
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(activate(xd[i], act));
  }
  Tensor<T> result = make_output("activation", x.shape(), std::move(out));
  if (auto* tape = tape_for({&x})) {
    record(tape, "activation", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get(), act] {
             auto& gx = xi->ensure_grad();
             for (std::size_t i = 0; i < gx.size(); ++i) {
               gx[i] += static_cast<T>(o->grad[i] * activate_grad(xi->data[i], act));
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training,
                  std::mt19937_64& rng) {
  require_defined(x, "dropout", "input");
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = uniform(rng) < p ? T{0} : keep_scale;
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  Tensor<T> result = make_output("dropout", x.shape(), std::move(out));
  if (auto* tape = tape_for({&x})) {
    record(tape, "dropout", {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get(), mask = std::move(mask)] {
             auto& gx = xi->ensure_grad();
             for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i] * mask[i];
           });
  }
  return result;
}

namespace {

// fn(image_index, patch_index) over the unfold layout.
template <typename Fn>
void for_each_patch_element(std::size_t N, std::size_t C, std::size_t H,
                            std::size_t W, std::size_t p, Fn&& fn) {
  const std::size_t gh = H / p, gw = W / p, T = gh * gw, L = C * p * p;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const std::size_t base = (n * T + gy * gw + gx) * L;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t iy = 0; iy < p; ++iy) {
            const std::size_t img =
                ((n * C + c) * H + gy * p + iy) * W + gx * p;
            const std::size_t pat = base + (c * p + iy) * p;
            for (std::size_t ix = 0; ix < p; ++ix) fn(img + ix, pat + ix);
          }
        }
      }
    }
  }
}

template <typename Fn>
void for_each_shuffle_element(std::size_t N, std::size_t C, std::size_t h,
                              std::size_t w, std::size_t p, Fn&& fn) {
  const std::size_t H = h * p, W = w * p;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
          const std::size_t depth_c = c * p * p + i * p + j;
          for (std::size_t y = 0; y < h; ++y) {
            const std::size_t deep = ((n * C * p * p + depth_c) * h + y) * w;
            const std::size_t wide = ((n * C + c) * H + y * p + i) * W + j;
            for (std::size_t x = 0; x < w; ++x) fn(wide + x * p, deep + x);
          }
        }
      }
    }
  }
}

// Shared body of the four pure rearrangement ops: out[dst(k)] = in[src(k)].
template <typename T, typename Map>
Tensor<T> rearrange(std::string_view op, const Tensor<T>& x, Shape out_shape,
                    Map&& for_each_pair, bool out_is_first) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for_each_pair([&](std::size_t first, std::size_t second) {
    if (out_is_first) {
      out[first] = xd[second];
    } else {
      out[second] = xd[first];
    }
  });
  Tensor<T> result(std::move(out_shape), std::move(out));
  if (auto* tape = tape_for({&x})) {
    record(tape, op, {x.impl()}, result,
           [xi = x.impl().get(), o = result.impl().get(), for_each_pair,
            out_is_first] {
             auto& gx = xi->ensure_grad();
             const auto& g = o->grad;
             for_each_pair([&](std::size_t first, std::size_t second) {
               if (out_is_first) {
                 gx[second] += g[first];
               } else {
                 gx[first] += g[second];
               }
             });
           });
  }
  return result;
}

}  // namespace

template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& x, std::size_t patch) {
  require_defined(x, "unfold_patches", "input");
  require(x.rank() == 4, "unfold_patches: expected N x C x H x W, got " +
                             shape_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw ConfigError("unfold_patches: patch size " + std::to_string(patch) +
                      " does not divide " + std::to_string(H) + "x" +
                      std::to_string(W));
  }
  const std::size_t T_ = (H / patch) * (W / patch);
  return rearrange<T>(
      "unfold_patches", x, {N, T_, C * patch * patch},
      [=](auto&& fn) { for_each_patch_element(N, C, H, W, patch, fn); },
      /*out_is_first=*/false);
}

template <typename T>
Tensor<T> fold_patches(const Tensor<T>& patches, std::size_t channels,
                       std::size_t height, std::size_t width,
                       std::size_t patch) {
  require_defined(patches, "fold_patches", "input");
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("fold_patches: patch size " + std::to_string(patch) +
                      " does not divide " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  const std::size_t T_ = (height / patch) * (width / patch);
  require(patches.rank() == 3 && patches.dim(1) == T_ &&
              patches.dim(2) == channels * patch * patch,
          "fold_patches: " + shape_string(patches.shape()) +
              " does not match the requested image layout");
  const std::size_t N = patches.dim(0);
  return rearrange<T>(
      "fold_patches", patches, {N, channels, height, width},
      [=](auto&& fn) {
        for_each_patch_element(N, channels, height, width, patch, fn);
      },
      /*out_is_first=*/true);
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t factor) {
  require_defined(x, "pixel_shuffle", "input");
  require(x.rank() == 4, "pixel_shuffle: expected rank 4, got " +
                             shape_string(x.shape()));
  const std::size_t p2 = factor * factor;
  if (factor == 0 || x.dim(1) % p2 != 0) {
    throw ConfigError("pixel_shuffle: " + std::to_string(x.dim(1)) +
                      " channels not divisible by " + std::to_string(p2));
  }
  const std::size_t N = x.dim(0), C = x.dim(1) / p2, h = x.dim(2), w = x.dim(3);
  return rearrange<T>(
      "pixel_shuffle", x, {N, C, h * factor, w * factor},
      [=](auto&& fn) { for_each_shuffle_element(N, C, h, w, factor, fn); },
      /*out_is_first=*/true);
}

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t factor) {
  require_defined(x, "space_to_depth", "input");
  require(x.rank() == 4, "space_to_depth: expected rank 4, got " +
                             shape_string(x.shape()));
  if (factor == 0 || x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ConfigError("space_to_depth: factor " + std::to_string(factor) +
                      " does not divide " + std::to_string(x.dim(2)) + "x" +
                      std::to_string(x.dim(3)));
  }
  const std::size_t N = x.dim(0), C = x.dim(1);
  const std::size_t h = x.dim(2) / factor, w = x.dim(3) / factor;
  return rearrange<T>(
      "space_to_depth", x, {N, C * factor * factor, h, w},
      [=](auto&& fn) { for_each_shuffle_element(N, C, h, w, factor, fn); },
      /*out_is_first=*/false);
}

template <typename T>
Tensor<T> mse_loss_masked(const Tensor<T>& pred, const Tensor<T>& label,
                          const Tensor<T>& mask) {
  require_defined(pred, "mse_loss_masked", "pred");
  require_defined(label, "mse_loss_masked", "label");
  require_defined(mask, "mse_loss_masked", "mask");
  require(pred.rank() == 4 && pred.shape() == label.shape(),
          "mse_loss_masked: pred " + shape_string(pred.shape()) +
              " and label " + shape_string(label.shape()) + " differ");
  const std::size_t N = pred.dim(0), C = pred.dim(1), H = pred.dim(2),
                    W = pred.dim(3);
  require(mask.shape() == Shape{N, 1, H, W},
          "mse_loss_masked: mask " + shape_string(mask.shape()) +
              " must be N x 1 x H x W");
  const std::size_t HW = H * W;
  const auto md = mask.data();
  std::size_t valid = 0;
  for (T m : md) {
    if (m == T{1}) {
      ++valid;
    } else if (m != T{0}) {
      throw ContractError("mse_loss_masked: mask entries must be 0 or 1");
    }
  }
  if (valid == 0) {
    throw DegenerateError("mse_loss_masked: batch has no valid pixel");
  }
  const auto pd = pred.data();
  const auto ld = label.data();
  double acc = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        if (md[n * HW + i] == T{0}) continue;
        const double e = static_cast<double>(pd[base + i]) - ld[base + i];
        acc += e * e;
      }
    }
  }
  const double denom = static_cast<double>(C * valid);
  Tensor<T> result =
      make_output<T>("mse_loss_masked", {1}, {static_cast<T>(acc / denom)});
  if (auto* tape = tape_for({&pred})) {
    record(tape, "mse_loss_masked", {pred.impl(), label.impl(), mask.impl()},
           result,
           [pi = pred.impl().get(), li = label.impl().get(),
            mi = mask.impl().get(), o = result.impl().get(), N, C, HW, denom] {
             auto& gp = pi->ensure_grad();
             const double scale = 2.0 * o->grad[0] / denom;
             for (std::size_t n = 0; n < N; ++n) {
               for (std::size_t c = 0; c < C; ++c) {
                 const std::size_t base = (n * C + c) * HW;
                 for (std::size_t i = 0; i < HW; ++i) {
                   if (mi->data[n * HW + i] == T{0}) continue;
                   const double e =
                       static_cast<double>(pi->data[base + i]) - li->data[base + i];
                   gp[base + i] += static_cast<T>(scale * e);
                 }
               }
             }
           });
  }
  return result;
}

#define SCD_INSTANTIATE_OPS(T)                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,                  \
                            const Tensor<T>&);                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> mul_scalar(const Tensor<T>&, double);                       \
  template Tensor<T> sum(const Tensor<T>&);                                      \
  template Tensor<T> mean(const Tensor<T>&);                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&); \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t,           \
                           std::size_t);                                         \
  template Tensor<T> prepend_token(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,                  \
                            const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&,              \
                                const Tensor<T>&, double);                       \
  template Tensor<T> softmax(const Tensor<T>&);                                  \
  template Tensor<T> activation(const Tensor<T>&, Activation);                   \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::mt19937_64&);  \
  template Tensor<T> unfold_patches(const Tensor<T>&, std::size_t);              \
  template Tensor<T> fold_patches(const Tensor<T>&, std::size_t, std::size_t,    \
                                  std::size_t, std::size_t);                     \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);               \
  template Tensor<T> space_to_depth(const Tensor<T>&, std::size_t);              \
  template Tensor<T> mse_loss_masked(const Tensor<T>&, const Tensor<T>&,         \
                                     const Tensor<T>&);

SCD_INSTANTIATE_OPS(float)
SCD_INSTANTIATE_OPS(double)

#undef SCD_INSTANTIATE_OPS

}  // namespace scd::ops
