#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "kd/ops.hpp"
#include "kd/tensor.hpp"

namespace kd {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng) : in_(in), out_(out) {
    const T std = static_cast<T>(std::sqrt(1.0 / static_cast<double>(in)));
    weight = Tensor<T>::randn({in, out}, rng, std).set_requires_grad(true);
    bias = Tensor<T>::zeros({out}).set_requires_grad(true);
  }

  // x: (..., in) -> (..., out)
  Tensor<T> forward(const Tensor<T>& x) const {
    Shape out_shape = x.shape();
    out_shape.back() = out_;
    Tensor<T> flat = reshape(x, {-1, in_});
    return reshape(add_rowvec(matmul(flat, weight), bias), std::move(out_shape));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }

  Tensor<T> weight, bias;

 private:
  std::int64_t in_ = 0, out_ = 0;
};

template <typename T>
struct NormParams {
  NormParams() = default;
  explicit NormParams(std::int64_t n) {
    gamma = Tensor<T>::ones({n}).set_requires_grad(true);
    beta = Tensor<T>::zeros({n}).set_requires_grad(true);
  }
  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
  Tensor<T> gamma, beta;
};

// Patch embedding: (B,3,H,W) -> (B, Np, dim), Np = (H/patch)*(W/patch)
template <typename T>
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(std::int64_t patch, std::int64_t dim, Rng& rng)
      : patch_(patch), proj_(3 * patch * patch, dim, rng) {}

  Tensor<T> forward(const Tensor<T>& image) const {
    return proj_.forward(im2patches(image, patch_));
  }

  std::int64_t patch() const { return patch_; }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    proj_.collect(prefix + ".proj", out);
  }

 private:
  std::int64_t patch_ = 0;
  Linear<T> proj_;
};

// Pre-norm transformer block with a single window spanning the whole patch
// grid. Returns the post-softmax attention weights of shape (B, H, Np, Np).
template <typename T>
class WindowAttentionBlock {
 public:
  struct Output {
    Tensor<T> tokens;
    Tensor<T> attn;  // (B, n_heads, Np, Np)
  };

  WindowAttentionBlock() = default;
  WindowAttentionBlock(std::int64_t dim, std::int64_t n_heads, std::int64_t mlp_hidden, Rng& rng)
      : dim_(dim), n_heads_(n_heads), ln1_(dim), ln2_(dim) {
    if (dim % n_heads != 0)
      throw ConfigError("window_attention: dim " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(n_heads));
    wq_ = Linear<T>(dim, dim, rng);
    wk_ = Linear<T>(dim, dim, rng);
    wv_ = Linear<T>(dim, dim, rng);
    wo_ = Linear<T>(dim, dim, rng);
    mlp1_ = Linear<T>(dim, mlp_hidden, rng);
    mlp2_ = Linear<T>(mlp_hidden, dim, rng);
  }

  Output forward(const Tensor<T>& tokens) const {
    const auto B = tokens.dim(0), N = tokens.dim(1);
    const std::int64_t dh = dim_ / n_heads_;

    Tensor<T> x = layer_norm(tokens, ln1_.gamma, ln1_.beta);
    auto split_heads = [&](const Tensor<T>& t) {
      // (B,N,D) -> (B*H, N, dh)
      return reshape(permute(reshape(t, {B, N, n_heads_, dh}), {0, 2, 1, 3}),
                     {B * n_heads_, N, dh});
    };
    Tensor<T> q = split_heads(wq_.forward(x));
    Tensor<T> k = split_heads(wk_.forward(x));
    Tensor<T> v = split_heads(wv_.forward(x));

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> logits = mul_scalar(bmm(q, k, /*trans_b=*/true), scale);
    Tensor<T> attn = softmax(logits, 2);
    Tensor<T> ctx = bmm(attn, v);  // (B*H, N, dh)
    Tensor<T> merged =
        reshape(permute(reshape(ctx, {B, n_heads_, N, dh}), {0, 2, 1, 3}), {B, N, dim_});
    Tensor<T> attended = add(tokens, wo_.forward(merged));

    Tensor<T> y = layer_norm(attended, ln2_.gamma, ln2_.beta);
    Tensor<T> out = add(attended, mlp2_.forward(relu(mlp1_.forward(y))));
    return {out, reshape(attn, {B, n_heads_, N, N})};
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    ln1_.collect(prefix + ".ln1", out);
    wq_.collect(prefix + ".q", out);
    wk_.collect(prefix + ".k", out);
    wv_.collect(prefix + ".v", out);
    wo_.collect(prefix + ".proj", out);
    ln2_.collect(prefix + ".ln2", out);
    mlp1_.collect(prefix + ".mlp1", out);
    mlp2_.collect(prefix + ".mlp2", out);
  }

  std::int64_t n_heads() const { return n_heads_; }

 private:
  std::int64_t dim_ = 0, n_heads_ = 0;
  NormParams<T> ln1_, ln2_;
  Linear<T> wq_, wk_, wv_, wo_, mlp1_, mlp2_;
};

// Global pool -> bottleneck MLP -> sigmoid gate -> channelwise rescale
template <typename T>
class SqueezeExcitation {
 public:
  SqueezeExcitation() = default;
  SqueezeExcitation(std::int64_t channels, std::int64_t reduction, Rng& rng) {
    if (channels % reduction != 0)
      throw ConfigError("squeeze_excitation: channels " + std::to_string(channels) +
                        " not divisible by reduction " + std::to_string(reduction));
    fc1_ = Linear<T>(channels, channels / reduction, rng);
    fc2_ = Linear<T>(channels / reduction, channels, rng);
  }

  Tensor<T> forward(const Tensor<T>& features) const {
    Tensor<T> pooled = global_avg_pool(features);  // (B,C)
    Tensor<T> gate = sigmoid(fc2_.forward(relu(fc1_.forward(pooled))));
    return scale_channels(features, gate);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

 private:
  Linear<T> fc1_, fc2_;
};

enum class Act { Relu, Hardswish };

template <typename T>
inline Tensor<T> apply_act(const Tensor<T>& x, Act act) {
  return act == Act::Relu ? relu(x) : hardswish(x);
}

// Depthwise 3x3 (groups == channels) + norm + act + squeeze-excitation,
// then pointwise 1x1 channel mix + norm + act.
template <typename T>
class DepthwiseSeparableBlock {
 public:
  DepthwiseSeparableBlock() = default;
  DepthwiseSeparableBlock(std::int64_t c_in, std::int64_t c_out, std::int64_t stride, Act act,
                          std::int64_t se_reduction, Rng& rng)
      : c_in_(c_in), c_out_(c_out), stride_(stride), act_(act), gn1_(c_in), gn2_(c_out),
        se_(c_in, se_reduction, rng) {
    const T std_dw = static_cast<T>(std::sqrt(2.0 / 9.0));
    dw_weight_ = Tensor<T>::randn({c_in, 1, 3, 3}, rng, std_dw).set_requires_grad(true);
    dw_bias_ = Tensor<T>::zeros({c_in}).set_requires_grad(true);
    const T std_pw = static_cast<T>(std::sqrt(2.0 / static_cast<double>(c_in)));
    pw_weight_ = Tensor<T>::randn({c_out, c_in, 1, 1}, rng, std_pw).set_requires_grad(true);
    pw_bias_ = Tensor<T>::zeros({c_out}).set_requires_grad(true);
  }

  // depthwise stage only; per-channel impulse response stays in its channel
  Tensor<T> depthwise_forward(const Tensor<T>& x) const {
    return conv2d(x, dw_weight_, &dw_bias_, stride_, 1, /*groups=*/c_in_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = apply_act(group_norm(depthwise_forward(x), gn1_.gamma, gn1_.beta), act_);
    h = se_.forward(h);
    h = conv2d(h, pw_weight_, &pw_bias_, 1, 0);
    return apply_act(group_norm(h, gn2_.gamma, gn2_.beta), act_);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".dw.weight", dw_weight_);
    out.emplace_back(prefix + ".dw.bias", dw_bias_);
    gn1_.collect(prefix + ".gn1", out);
    se_.collect(prefix + ".se", out);
    out.emplace_back(prefix + ".pw.weight", pw_weight_);
    out.emplace_back(prefix + ".pw.bias", pw_bias_);
    gn2_.collect(prefix + ".gn2", out);
  }

  std::int64_t c_in() const { return c_in_; }
  std::int64_t c_out() const { return c_out_; }
  std::int64_t stride() const { return stride_; }

 private:
  std::int64_t c_in_ = 0, c_out_ = 0, stride_ = 1;
  Act act_ = Act::Relu;
  Tensor<T> dw_weight_, dw_bias_, pw_weight_, pw_bias_;
  NormParams<T> gn1_, gn2_;
  SqueezeExcitation<T> se_;
};

}  // namespace kd
