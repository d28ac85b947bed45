#pragma once

#include <Eigen/Core>

#include "kd/tensor.hpp"

namespace kd {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul / linear

// (M,K) x (K,N) -> (M,N)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw DimError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
  const auto M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(M * N));
  detail::ECMap<T> A(a.data().data(), M, K), B(b.data().data(), K, N);
  detail::EMap<T>(out.data(), M, N).noalias() = A * B;
  return Tensor<T>::make_op({M, N}, std::move(out), {a, b}, [a, b, M, K, N](auto& node) mutable {
    detail::ECMap<T> G(node.grad.data(), M, N);
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      detail::ECMap<T> B(b.data().data(), K, N);
      detail::EMap<T>(a.grad().data(), M, K).noalias() += G * B.transpose();
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      detail::ECMap<T> A(a.data().data(), M, K);
      detail::EMap<T>(b.grad().data(), K, N).noalias() += A.transpose() * G;
    }
  });
}

// batched matmul: (G,M,K) x (G,K,N) -> (G,M,N); trans_b treats b as (G,N,K)
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw DimError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
  const auto G = a.dim(0), M = a.dim(1), K = a.dim(2);
  const auto N = trans_b ? b.dim(1) : b.dim(2);
  if ((trans_b ? b.dim(2) : b.dim(1)) != K)
    throw DimError("bmm: inner dim mismatch " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(G * M * N));
  for (std::int64_t g = 0; g < G; ++g) {
    detail::ECMap<T> A(a.data().data() + g * M * K, M, K);
    detail::EMap<T> O(out.data() + g * M * N, M, N);
    if (trans_b) {
      detail::ECMap<T> B(b.data().data() + g * N * K, N, K);
      O.noalias() = A * B.transpose();
    } else {
      detail::ECMap<T> B(b.data().data() + g * K * N, K, N);
      O.noalias() = A * B;
    }
  }
  return Tensor<T>::make_op({G, M, N}, std::move(out), {a, b},
                            [a, b, G, M, K, N, trans_b](auto& node) mutable {
    for (std::int64_t g = 0; g < G; ++g) {
      detail::ECMap<T> Gd(node.grad.data() + g * M * N, M, N);
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        detail::EMap<T> dA(a.grad().data() + g * M * K, M, K);
        if (trans_b) {
          detail::ECMap<T> B(b.data().data() + g * N * K, N, K);
          dA.noalias() += Gd * B;
        } else {
          detail::ECMap<T> B(b.data().data() + g * K * N, K, N);
          dA.noalias() += Gd * B.transpose();
        }
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        detail::ECMap<T> A(a.data().data() + g * M * K, M, K);
        if (trans_b) {
          detail::EMap<T> dB(b.grad().data() + g * N * K, N, K);
          dB.noalias() += Gd.transpose() * A;
        } else {
          detail::EMap<T> dB(b.grad().data() + g * K * N, K, N);
          dB.noalias() += A.transpose() * Gd;
        }
      }
    }
  });
}

// broadcast a length-N row vector over the rows of (M,N)
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1))
    throw DimError("add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const auto M = x.dim(0), N = x.dim(1);
  std::vector<T> out(x.data().size());
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t j = 0; j < N; ++j)
      out[static_cast<std::size_t>(i * N + j)] =
          x.data()[static_cast<std::size_t>(i * N + j)] + bias.data()[static_cast<std::size_t>(j)];
  return Tensor<T>::make_op({M, N}, std::move(out), {x, bias}, [x, bias, M, N](auto& node) mutable {
    if (x.requires_grad()) {
      x.node()->ensure_grad();
      detail::accumulate(x.grad(), node.grad);
    }
    if (bias.requires_grad()) {
      bias.node()->ensure_grad();
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j)
          bias.grad()[static_cast<std::size_t>(j)] += node.grad[static_cast<std::size_t>(i * N + j)];
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d (grouped cross-correlation) via per-group im2col + GEMM

namespace detail {

// col layout: (Cg*Kh*Kw) rows x (Ho*Wo) cols, for one sample and one group
template <typename T>
void im2col(const T* src, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t Kh,
            std::int64_t Kw, std::int64_t stride, std::int64_t pad, std::int64_t Ho,
            std::int64_t Wo, T* col) {
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t kh = 0; kh < Kh; ++kh)
      for (std::int64_t kw = 0; kw < Kw; ++kw) {
        T* row = col + ((c * Kh + kh) * Kw + kw) * Ho * Wo;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih = oh * stride - pad + kh;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const std::int64_t iw = ow * stride - pad + kw;
            row[oh * Wo + ow] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                    ? src[(c * H + ih) * W + iw]
                                    : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t Kh,
                std::int64_t Kw, std::int64_t stride, std::int64_t pad, std::int64_t Ho,
                std::int64_t Wo, T* dst) {
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t kh = 0; kh < Kh; ++kh)
      for (std::int64_t kw = 0; kw < Kw; ++kw) {
        const T* row = col + ((c * Kh + kh) * Kw + kw) * Ho * Wo;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) continue;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const std::int64_t iw = ow * stride - pad + kw;
            if (iw >= 0 && iw < W) dst[(c * H + ih) * W + iw] += row[oh * Wo + ow];
          }
        }
      }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::int64_t stride, std::int64_t padding, std::int64_t groups = 1) {
  if (stride <= 0) throw ConfigError("conv2d: stride must be positive");
  if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");
  if (groups <= 0) throw ConfigError("conv2d: groups must be positive");
  if (input.ndim() != 4 || weight.ndim() != 4)
    throw DimError("conv2d: expected 4-d input and weight, got " + shape_str(input.shape()) +
                   " and " + shape_str(weight.shape()));
  const auto B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto O = weight.dim(0), Cw = weight.dim(1), Kh = weight.dim(2), Kw = weight.dim(3);
  if (C % groups != 0 || O % groups != 0)
    throw DimError("conv2d: channels " + std::to_string(C) + "/" + std::to_string(O) +
                   " not divisible by groups " + std::to_string(groups));
  if (Cw != C / groups)
    throw DimError("conv2d: weight expects " + std::to_string(Cw) + " in-channels per group, input has " +
                   std::to_string(C / groups));
  if (bias && (bias->ndim() != 1 || bias->dim(0) != O))
    throw DimError("conv2d: bias shape " + shape_str(bias->shape()) + " must be (" +
                   std::to_string(O) + ")");
  const std::int64_t Ho = (H + 2 * padding - Kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * padding - Kw) / stride + 1;
  if (H + 2 * padding < Kh || W + 2 * padding < Kw || Ho <= 0 || Wo <= 0)
    throw DimError("conv2d: input " + shape_str(input.shape()) + " with kernel " +
                   shape_str(weight.shape()) + ", stride " + std::to_string(stride) + ", padding " +
                   std::to_string(padding) + " has no positive output size");

  const std::int64_t Cg = C / groups, Og = O / groups;
  const std::int64_t col_rows = Cg * Kh * Kw, col_cols = Ho * Wo;

  std::vector<T> out(static_cast<std::size_t>(B * O * Ho * Wo));
  std::vector<T> col(static_cast<std::size_t>(col_rows * col_cols));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t g = 0; g < groups; ++g) {
      detail::im2col(input.data().data() + (b * C + g * Cg) * H * W, Cg, H, W, Kh, Kw, stride,
                     padding, Ho, Wo, col.data());
      detail::ECMap<T> Wm(weight.data().data() + g * Og * col_rows, Og, col_rows);
      detail::ECMap<T> Cm(col.data(), col_rows, col_cols);
      detail::EMap<T>(out.data() + (b * O + g * Og) * col_cols, Og, col_cols).noalias() = Wm * Cm;
    }
  if (bias) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t o = 0; o < O; ++o) {
        const T bv = bias->data()[static_cast<std::size_t>(o)];
        T* dst = out.data() + (b * O + o) * col_cols;
        for (std::int64_t i = 0; i < col_cols; ++i) dst[i] += bv;
      }
  }

  std::vector<Tensor<T>> parents = {input, weight};
  if (bias) parents.push_back(*bias);
  Tensor<T> bias_t = bias ? *bias : Tensor<T>();
  const bool has_bias = bias != nullptr;
  return Tensor<T>::make_op(
      {B, O, Ho, Wo}, std::move(out), std::move(parents),
      [input, weight, bias_t, has_bias, B, C, H, W, O, Kh, Kw, stride, padding, groups, Cg, Og, Ho,
       Wo, col_rows, col_cols](auto& node) mutable {
        std::vector<T> col(static_cast<std::size_t>(col_rows * col_cols));
        std::vector<T> dcol(static_cast<std::size_t>(col_rows * col_cols));
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t g = 0; g < groups; ++g) {
            detail::ECMap<T> Gm(node.grad.data() + (b * O + g * Og) * col_cols, Og, col_cols);
            if (weight.requires_grad()) {
              weight.node()->ensure_grad();
              detail::im2col(input.data().data() + (b * C + g * Cg) * H * W, Cg, H, W, Kh, Kw,
                             stride, padding, Ho, Wo, col.data());
              detail::ECMap<T> Cm(col.data(), col_rows, col_cols);
              detail::EMap<T>(weight.grad().data() + g * Og * col_rows, Og, col_rows).noalias() +=
                  Gm * Cm.transpose();
            }
            if (input.requires_grad()) {
              input.node()->ensure_grad();
              detail::ECMap<T> Wm(weight.data().data() + g * Og * col_rows, Og, col_rows);
              detail::EMap<T>(dcol.data(), col_rows, col_cols).noalias() = Wm.transpose() * Gm;
              detail::col2im_add(dcol.data(), Cg, H, W, Kh, Kw, stride, padding, Ho, Wo,
                                 input.grad().data() + (b * C + g * Cg) * H * W);
            }
          }
        if (has_bias && bias_t.requires_grad()) {
          bias_t.node()->ensure_grad();
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t o = 0; o < O; ++o) {
              T s = T(0);
              const T* g = node.grad.data() + (b * O + o) * col_cols;
              for (std::int64_t i = 0; i < col_cols; ++i) s += g[i];
              bias_t.grad()[static_cast<std::size_t>(o)] += s;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// bilinear resize, half-pixel-center convention

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
  if (input.ndim() != 4)
    throw DimError("bilinear_resize: expected 4-d input, got " + shape_str(input.shape()));
  if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: target size must be >= 1");
  const auto B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (out_h == H && out_w == W) {
    // identity resize: pass values through exactly
    std::vector<T> out = input.data();
    return Tensor<T>::make_op(input.shape(), std::move(out), {input}, [input](auto& node) mutable {
      if (input.requires_grad()) {
        input.node()->ensure_grad();
        detail::accumulate(input.grad(), node.grad);
      }
    });
  }

  struct Tap {
    std::int64_t lo, hi;
    T w_hi;  // weight of hi; lo gets 1 - w_hi
  };
  auto make_taps = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
      const std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
      const std::int64_t hi = std::min(lo + 1, in - 1);
      taps[static_cast<std::size_t>(o)] = {lo, hi, static_cast<T>(src - static_cast<double>(lo))};
    }
    return taps;
  };
  auto ytaps = std::make_shared<std::vector<Tap>>(make_taps(H, out_h));
  auto xtaps = std::make_shared<std::vector<Tap>>(make_taps(W, out_w));

  std::vector<T> out(static_cast<std::size_t>(B * C * out_h * out_w));
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = input.data().data() + bc * H * W;
    T* dst = out.data() + bc * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& ty = (*ytaps)[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& tx = (*xtaps)[static_cast<std::size_t>(ox)];
        const T v00 = src[ty.lo * W + tx.lo], v01 = src[ty.lo * W + tx.hi];
        const T v10 = src[ty.hi * W + tx.lo], v11 = src[ty.hi * W + tx.hi];
        const T top = v00 + (v01 - v00) * tx.w_hi;
        const T bot = v10 + (v11 - v10) * tx.w_hi;
        dst[oy * out_w + ox] = top + (bot - top) * ty.w_hi;
      }
    }
  }
  return Tensor<T>::make_op(
      {B, C, out_h, out_w}, std::move(out), {input},
      [input, ytaps, xtaps, B, C, H, W, out_h, out_w](auto& node) mutable {
        if (!input.requires_grad()) return;
        input.node()->ensure_grad();
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          T* dst = input.grad().data() + bc * H * W;
          const T* g = node.grad.data() + bc * out_h * out_w;
          for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const Tap& ty = (*ytaps)[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
              const Tap& tx = (*xtaps)[static_cast<std::size_t>(ox)];
              const T gv = g[oy * out_w + ox];
              const T wy1 = ty.w_hi, wy0 = T(1) - wy1;
              const T wx1 = tx.w_hi, wx0 = T(1) - wx1;
              dst[ty.lo * W + tx.lo] += gv * wy0 * wx0;
              dst[ty.lo * W + tx.hi] += gv * wy0 * wx1;
              dst[ty.hi * W + tx.lo] += gv * wy1 * wx0;
              dst[ty.hi * W + tx.hi] += gv * wy1 * wx1;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax / losses

// max-subtracted softmax along `axis`, logits divided by `temperature` first
template <typename T>
Tensor<T> softmax(const Tensor<T>& input, int axis, T temperature = T(1)) {
  if (axis < 0) axis += input.ndim();
  if (axis < 0 || axis >= input.ndim())
    throw DimError("softmax: axis out of range for " + shape_str(input.shape()));
  if (!(temperature >= T(1e-6))) throw ConfigError("softmax: temperature must be >= 1e-6");
  if (!input.all_finite()) throw NumericError("softmax: non-finite input");

  const std::int64_t n = input.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= input.dim(i);
  for (int i = axis + 1; i < input.ndim(); ++i) inner *= input.dim(i);

  std::vector<T> out(input.data().size());
  const T* src = input.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * n * inner + i;
      T mx = src[base];
      for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, src[base + k * inner]);
      T sum = T(0);
      for (std::int64_t k = 0; k < n; ++k) {
        const T e = std::exp((src[base + k * inner] - mx) / temperature);
        out[static_cast<std::size_t>(base + k * inner)] = e;
        sum += e;
      }
      for (std::int64_t k = 0; k < n; ++k)
        out[static_cast<std::size_t>(base + k * inner)] /= sum;
    }

  Tensor<T> result = Tensor<T>::make_op(input.shape(), std::move(out), {input}, nullptr);
  if (result.requires_grad()) {
    auto y = std::make_shared<std::vector<T>>(result.data());
    result.node()->backward_fn = [input, y, outer, inner, n, temperature](auto& node) mutable {
      if (!input.requires_grad()) return;
      input.node()->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * n * inner + i;
          T dot = T(0);
          for (std::int64_t k = 0; k < n; ++k)
            dot += node.grad[static_cast<std::size_t>(base + k * inner)] *
                   (*y)[static_cast<std::size_t>(base + k * inner)];
          for (std::int64_t k = 0; k < n; ++k) {
            const std::size_t idx = static_cast<std::size_t>(base + k * inner);
            input.grad()[idx] += (*y)[idx] * (node.grad[idx] - dot) / temperature;
          }
        }
    };
  }
  return result;
}

// Mean over slices of sum_k p_k (log p_k - log q_k); q floored at eps before
// the log. Differentiable w.r.t. both arguments.
template <typename T>
Tensor<T> kl_div(const Tensor<T>& p, const Tensor<T>& q, int axis, T eps = T(1e-9)) {
  detail::check_same_shape(p, q, "kl_div");
  if (axis < 0) axis += p.ndim();
  if (axis < 0 || axis >= p.ndim())
    throw DimError("kl_div: axis out of range for " + shape_str(p.shape()));
  const std::int64_t n = p.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= p.dim(i);
  for (int i = axis + 1; i < p.ndim(); ++i) inner *= p.dim(i);
  const std::int64_t slices = outer * inner;

  // validate slices are distributions
  const T* pd = p.data().data();
  const T* qd = q.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * n * inner + i;
      T sp = T(0), sq = T(0);
      for (std::int64_t k = 0; k < n; ++k) {
        sp += pd[base + k * inner];
        sq += qd[base + k * inner];
      }
      if (std::abs(static_cast<double>(sp) - 1.0) > 1e-4 ||
          std::abs(static_cast<double>(sq) - 1.0) > 1e-4)
        throw NumericError("kl_div: input slices must sum to 1 within 1e-4");
    }

  double acc = 0;
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * n * inner + i;
      for (std::int64_t k = 0; k < n; ++k) {
        const T pv = pd[base + k * inner];
        const T qv = std::max(qd[base + k * inner], eps);
        if (pv > T(0))
          acc += static_cast<double>(pv) *
                 (std::log(static_cast<double>(std::max(pv, eps))) -
                  std::log(static_cast<double>(qv)));
      }
    }
  const T value = static_cast<T>(acc / static_cast<double>(slices));

  return Tensor<T>::make_op(
      Shape{}, {value}, {p, q}, [p, q, outer, inner, n, slices, eps](auto& node) mutable {
        const T g = node.grad[0] / static_cast<T>(slices);
        const T* pd = p.data().data();
        const T* qd = q.data().data();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            for (std::int64_t k = 0; k < n; ++k) {
              const std::size_t idx = static_cast<std::size_t>(base + k * inner);
              const T pv = pd[idx];
              const T qv = std::max(qd[idx], eps);
              if (q.requires_grad()) {
                q.node()->ensure_grad();
                if (qd[idx] > eps) q.grad()[idx] += -g * pv / qv;
              }
              if (p.requires_grad()) {
                p.node()->ensure_grad();
                p.grad()[idx] +=
                    g * (std::log(std::max(pv, eps)) + T(1) - std::log(qv));
              }
            }
          }
      });
}

// -(1/B) sum_i log softmax(logits)_{label_i}, fused log-softmax
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int64_t>& labels) {
  if (logits.ndim() != 2)
    throw DimError("cross_entropy: expected (B,C) logits, got " + shape_str(logits.shape()));
  const auto B = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw DimError("cross_entropy: batch " + std::to_string(B) + " vs " +
                   std::to_string(labels.size()) + " labels");
  for (auto l : labels)
    if (l < 0 || l >= C) throw DataError("cross_entropy: label " + std::to_string(l) +
                                         " out of range [0," + std::to_string(C) + ")");
  const T* z = logits.data().data();
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * C));
  double acc = 0;
  for (std::int64_t i = 0; i < B; ++i) {
    T mx = z[i * C];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, z[i * C + c]);
    double lse = 0;
    for (std::int64_t c = 0; c < C; ++c) lse += std::exp(static_cast<double>(z[i * C + c] - mx));
    lse = std::log(lse);
    for (std::int64_t c = 0; c < C; ++c)
      (*probs)[static_cast<std::size_t>(i * C + c)] =
          static_cast<T>(std::exp(static_cast<double>(z[i * C + c] - mx) - lse));
    acc -= static_cast<double>(z[i * C + labels[static_cast<std::size_t>(i)]] - mx) - lse;
  }
  const T value = static_cast<T>(acc / static_cast<double>(B));
  auto lab = std::make_shared<std::vector<std::int64_t>>(labels);
  return Tensor<T>::make_op(Shape{}, {value}, {logits}, [logits, probs, lab, B, C](auto& node) mutable {
    if (!logits.requires_grad()) return;
    logits.node()->ensure_grad();
    const T g = node.grad[0] / static_cast<T>(B);
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t c = 0; c < C; ++c) {
        T d = (*probs)[static_cast<std::size_t>(i * C + c)];
        if (c == (*lab)[static_cast<std::size_t>(i)]) d -= T(1);
        logits.grad()[static_cast<std::size_t>(i * C + c)] += g * d;
      }
  });
}

// focal loss -(1/B) sum (1 - p_t)^gamma log p_t; gamma = 0 reduces to CE
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, const std::vector<std::int64_t>& labels, T gamma) {
  if (gamma == T(0)) return cross_entropy(logits, labels);
  if (logits.ndim() != 2)
    throw DimError("focal_loss: expected (B,C) logits, got " + shape_str(logits.shape()));
  const auto B = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw DimError("focal_loss: batch mismatch");
  for (auto l : labels)
    if (l < 0 || l >= C) throw DataError("focal_loss: label out of range");
  const T* z = logits.data().data();
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * C));
  const T eps = T(1e-9);
  double acc = 0;
  for (std::int64_t i = 0; i < B; ++i) {
    T mx = z[i * C];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, z[i * C + c]);
    double lse = 0;
    for (std::int64_t c = 0; c < C; ++c) lse += std::exp(static_cast<double>(z[i * C + c] - mx));
    lse = std::log(lse);
    for (std::int64_t c = 0; c < C; ++c)
      (*probs)[static_cast<std::size_t>(i * C + c)] =
          static_cast<T>(std::exp(static_cast<double>(z[i * C + c] - mx) - lse));
    const double pt = std::max<double>(
        (*probs)[static_cast<std::size_t>(i * C + labels[static_cast<std::size_t>(i)])],
        static_cast<double>(eps));
    acc -= std::pow(1.0 - pt, static_cast<double>(gamma)) * std::log(pt);
  }
  const T value = static_cast<T>(acc / static_cast<double>(B));
  auto lab = std::make_shared<std::vector<std::int64_t>>(labels);
  return Tensor<T>::make_op(
      Shape{}, {value}, {logits}, [logits, probs, lab, gamma, eps, B, C](auto& node) mutable {
        if (!logits.requires_grad()) return;
        logits.node()->ensure_grad();
        const T g = node.grad[0] / static_cast<T>(B);
        for (std::int64_t i = 0; i < B; ++i) {
          const std::int64_t t = (*lab)[static_cast<std::size_t>(i)];
          const T pt = std::max((*probs)[static_cast<std::size_t>(i * C + t)], eps);
          // dL_i/dpt for L_i = -(1-pt)^g log pt
          const T one_m = T(1) - pt;
          const T dldpt = gamma * std::pow(one_m, gamma - T(1)) * std::log(pt) -
                          std::pow(one_m, gamma) / pt;
          for (std::int64_t c = 0; c < C; ++c) {
            const T pc = (*probs)[static_cast<std::size_t>(i * C + c)];
            const T dptdz = pt * ((c == t ? T(1) : T(0)) - pc);
            logits.grad()[static_cast<std::size_t>(i * C + c)] += g * dldpt * dptdz;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// normalization (fused, single-group / layer style)

namespace detail {

// normalize over contiguous feature blocks of length F per row; affine
// params are broadcast with period `affine_period` inside the block
template <typename T>
Tensor<T> norm_over_blocks(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           std::int64_t rows, std::int64_t F, std::int64_t affine_stride,
                           T eps) {
  // affine index for feature f is (f / affine_stride)
  std::vector<T> out(x.data().size());
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  const T* src = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double m = 0;
    for (std::int64_t f = 0; f < F; ++f) m += src[r * F + f];
    m /= static_cast<double>(F);
    double v = 0;
    for (std::int64_t f = 0; f < F; ++f) {
      const double d = src[r * F + f] - m;
      v += d * d;
    }
    v /= static_cast<double>(F);
    const T rs = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    (*mean)[static_cast<std::size_t>(r)] = static_cast<T>(m);
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t f = 0; f < F; ++f) {
      const std::int64_t a = f / affine_stride;
      out[static_cast<std::size_t>(r * F + f)] =
          (src[r * F + f] - static_cast<T>(m)) * rs * gamma.data()[static_cast<std::size_t>(a)] +
          beta.data()[static_cast<std::size_t>(a)];
    }
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, rstd, rows, F, affine_stride](auto& node) mutable {
        const T* src = x.data().data();
        for (std::int64_t r = 0; r < rows; ++r) {
          const T m = (*mean)[static_cast<std::size_t>(r)];
          const T rs = (*rstd)[static_cast<std::size_t>(r)];
          // dy*gamma statistics for the row
          double sum_dg = 0, sum_dgx = 0;
          for (std::int64_t f = 0; f < F; ++f) {
            const std::int64_t a = f / affine_stride;
            const T xhat = (src[r * F + f] - m) * rs;
            const T dg = node.grad[static_cast<std::size_t>(r * F + f)] *
                         gamma.data()[static_cast<std::size_t>(a)];
            sum_dg += dg;
            sum_dgx += static_cast<double>(dg) * xhat;
            if (gamma.requires_grad()) {
              gamma.node()->ensure_grad();
              gamma.grad()[static_cast<std::size_t>(a)] +=
                  node.grad[static_cast<std::size_t>(r * F + f)] * xhat;
            }
            if (beta.requires_grad()) {
              beta.node()->ensure_grad();
              beta.grad()[static_cast<std::size_t>(a)] +=
                  node.grad[static_cast<std::size_t>(r * F + f)];
            }
          }
          if (x.requires_grad()) {
            x.node()->ensure_grad();
            const T mdg = static_cast<T>(sum_dg / static_cast<double>(F));
            const T mdgx = static_cast<T>(sum_dgx / static_cast<double>(F));
            for (std::int64_t f = 0; f < F; ++f) {
              const std::int64_t a = f / affine_stride;
              const T xhat = (src[r * F + f] - m) * rs;
              const T dg = node.grad[static_cast<std::size_t>(r * F + f)] *
                           gamma.data()[static_cast<std::size_t>(a)];
              x.grad()[static_cast<std::size_t>(r * F + f)] += rs * (dg - mdg - xhat * mdgx);
            }
          }
        }
      });
}

}  // namespace detail

// Layer norm over the last dim of (..., D); gamma/beta are length D.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const std::int64_t D = x.dim(x.ndim() - 1);
  if (gamma.numel() != D || beta.numel() != D)
    throw DimError("layer_norm: affine params must have length " + std::to_string(D));
  return detail::norm_over_blocks(x, gamma, beta, x.numel() / D, D, /*affine_stride=*/1, eps);
}

// Single-group group norm over (B,C,H,W): normalize each sample over C*H*W,
// per-channel affine.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  if (x.ndim() != 4) throw DimError("group_norm: expected (B,C,H,W), got " + shape_str(x.shape()));
  const auto C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw DimError("group_norm: affine params must have length " + std::to_string(C));
  return detail::norm_over_blocks(x, gamma, beta, x.dim(0), C * HW, /*affine_stride=*/HW, eps);
}

// ---------------------------------------------------------------------------
// pooling / reshuffles

// (B,C,H,W) -> (B,C)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw DimError("global_avg_pool: expected (B,C,H,W)");
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(B * C));
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    double s = 0;
    for (std::int64_t i = 0; i < HW; ++i) s += x.data()[static_cast<std::size_t>(bc * HW + i)];
    out[static_cast<std::size_t>(bc)] = static_cast<T>(s / static_cast<double>(HW));
  }
  return Tensor<T>::make_op({B, C}, std::move(out), {x}, [x, B, C, HW](auto& node) mutable {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      const T g = node.grad[static_cast<std::size_t>(bc)] / static_cast<T>(HW);
      for (std::int64_t i = 0; i < HW; ++i) x.grad()[static_cast<std::size_t>(bc * HW + i)] += g;
    }
  });
}

// (B,N,D) -> (B,D), mean over tokens
template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  if (x.ndim() != 3) throw DimError("mean_tokens: expected (B,N,D)");
  const auto B = x.dim(0), N = x.dim(1), D = x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(B * D), T(0));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t d = 0; d < D; ++d)
        out[static_cast<std::size_t>(b * D + d)] +=
            x.data()[static_cast<std::size_t>((b * N + n) * D + d)];
  for (auto& v : out) v /= static_cast<T>(N);
  return Tensor<T>::make_op({B, D}, std::move(out), {x}, [x, B, N, D](auto& node) mutable {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t d = 0; d < D; ++d)
          x.grad()[static_cast<std::size_t>((b * N + n) * D + d)] +=
              node.grad[static_cast<std::size_t>(b * D + d)] / static_cast<T>(N);
  });
}

// (B,3,H,W) -> (B, Np, 3*p*p) non-overlapping patches, row-major patch scan
template <typename T>
Tensor<T> im2patches(const Tensor<T>& x, std::int64_t patch) {
  if (x.ndim() != 4) throw DimError("im2patches: expected (B,C,H,W)");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % patch != 0 || W % patch != 0)
    throw ConfigError("im2patches: image " + std::to_string(H) + "x" + std::to_string(W) +
                      " not divisible by patch " + std::to_string(patch));
  const std::int64_t Gh = H / patch, Gw = W / patch, Np = Gh * Gw, P = C * patch * patch;
  std::vector<T> out(static_cast<std::size_t>(B * Np * P));
  auto src_index = [&](std::int64_t b, std::int64_t n, std::int64_t k) {
    const std::int64_t gy = n / Gw, gx = n % Gw;
    const std::int64_t c = k / (patch * patch);
    const std::int64_t py = (k / patch) % patch, px = k % patch;
    return ((b * C + c) * H + gy * patch + py) * W + gx * patch + px;
  };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t n = 0; n < Np; ++n)
      for (std::int64_t k = 0; k < P; ++k)
        out[static_cast<std::size_t>((b * Np + n) * P + k)] =
            x.data()[static_cast<std::size_t>(src_index(b, n, k))];
  return Tensor<T>::make_op({B, Np, P}, std::move(out), {x},
                            [x, B, Np, P, C, H, W, Gw, patch](auto& node) mutable {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t n = 0; n < Np; ++n)
        for (std::int64_t k = 0; k < P; ++k) {
          const std::int64_t gy = n / Gw, gx = n % Gw;
          const std::int64_t c = k / (patch * patch);
          const std::int64_t py = (k / patch) % patch, px = k % patch;
          x.grad()[static_cast<std::size_t>(((b * C + c) * H + gy * patch + py) * W + gx * patch +
                                            px)] +=
              node.grad[static_cast<std::size_t>((b * Np + n) * P + k)];
        }
  });
}

// out[b,c,h,w] = x[b,c,h,w] * gate[b,c]
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate) {
  if (x.ndim() != 4 || gate.ndim() != 2 || gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1))
    throw DimError("scale_channels: " + shape_str(x.shape()) + " vs gate " +
                   shape_str(gate.shape()));
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(x.data().size());
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T g = gate.data()[static_cast<std::size_t>(bc)];
    for (std::int64_t i = 0; i < HW; ++i)
      out[static_cast<std::size_t>(bc * HW + i)] =
          x.data()[static_cast<std::size_t>(bc * HW + i)] * g;
  }
  return Tensor<T>::make_op(x.shape(), std::move(out), {x, gate},
                            [x, gate, B, C, HW](auto& node) mutable {
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        const T g = gate.data()[static_cast<std::size_t>(bc)];
        for (std::int64_t i = 0; i < HW; ++i)
          x.grad()[static_cast<std::size_t>(bc * HW + i)] +=
              node.grad[static_cast<std::size_t>(bc * HW + i)] * g;
      }
      if (gate.requires_grad()) {
        gate.node()->ensure_grad();
        T s = T(0);
        for (std::int64_t i = 0; i < HW; ++i)
          s += node.grad[static_cast<std::size_t>(bc * HW + i)] *
               x.data()[static_cast<std::size_t>(bc * HW + i)];
        gate.grad()[static_cast<std::size_t>(bc)] += s;
      }
    }
  });
}

}  // namespace kd
