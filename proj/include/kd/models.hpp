#pragma once

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "kd/layers.hpp"

namespace kd {

// Input standardization constants (images arrive in [0,1]).
inline constexpr double kInputMean = 0.5;
inline constexpr double kInputStd = 0.25;

template <typename T>
Tensor<T> standardize_input(const Tensor<T>& x) {
  return mul_scalar(add_scalar(x, static_cast<T>(-kInputMean)), static_cast<T>(1.0 / kInputStd));
}

// FNV-1a over the parameter bytes; used to verify the frozen teacher.
template <typename T>
std::uint64_t params_checksum(const NamedParams<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : params) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    for (T v : t.data()) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

struct TeacherConfig {
  std::int64_t n_classes = 8;
  std::int64_t image_size = 64;
  std::int64_t patch = 8;
  std::int64_t dim = 64;
  std::int64_t n_heads = 4;
  std::int64_t n_blocks = 2;
  std::int64_t mlp_hidden = 512;
};

// Desk-scale windowed-attention teacher. One non-shifted window spans the
// whole patch grid; attention maps are taken from block 1.
template <typename T>
class TeacherModel {
 public:
  struct Output {
    Tensor<T> logits;     // (B, C)
    Tensor<T> attention;  // (B, n_heads, Np, Np), post-softmax
  };

  TeacherModel() = default;
  TeacherModel(const TeacherConfig& cfg, Rng rng) : cfg_(cfg) {
    embed_ = PatchEmbed<T>(cfg.patch, cfg.dim, rng);
    const std::int64_t grid = cfg.image_size / cfg.patch;
    n_patches_ = grid * grid;
    pos_embed_ =
        Tensor<T>::randn({1, n_patches_, cfg.dim}, rng, T(0.02)).set_requires_grad(true);
    for (std::int64_t i = 0; i < cfg.n_blocks; ++i)
      blocks_.emplace_back(cfg.dim, cfg.n_heads, cfg.mlp_hidden, rng);
    head_norm_ = NormParams<T>(cfg.dim);
    head1_ = Linear<T>(cfg.dim, cfg.dim, rng);
    head2_ = Linear<T>(cfg.dim, cfg.n_classes, rng);
  }

  Output forward(const Tensor<T>& image) const {
    check_input(image);
    Tensor<T> x = embed_.forward(standardize_input(image));  // (B, Np, dim)
    const auto B = x.dim(0);
    // broadcast positional embedding over the batch
    Tensor<T> pos = pos_embed_;
    if (B > 1) {
      std::vector<T> rep(static_cast<std::size_t>(B) * pos_embed_.data().size());
      for (std::int64_t b = 0; b < B; ++b)
        std::copy(pos_embed_.data().begin(), pos_embed_.data().end(),
                  rep.begin() + static_cast<std::ptrdiff_t>(b) *
                                    static_cast<std::ptrdiff_t>(pos_embed_.data().size()));
      Tensor<T> src = pos_embed_;
      pos = Tensor<T>::make_op({B, n_patches_, cfg_.dim}, std::move(rep), {src},
                               [src, B](auto& node) mutable {
                                 if (!src.requires_grad()) return;
                                 src.node()->ensure_grad();
                                 const std::size_t n = src.grad().size();
                                 for (std::int64_t b = 0; b < B; ++b)
                                   for (std::size_t i = 0; i < n; ++i)
                                     src.grad()[i] += node.grad[static_cast<std::size_t>(b) * n + i];
                               });
    }
    x = add(x, pos);

    Tensor<T> attn_block1;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      auto out = blocks_[i].forward(x);
      x = out.tokens;
      if (i == 0) attn_block1 = out.attn;
    }
    Tensor<T> pooled = layer_norm(mean_tokens(x), head_norm_.gamma, head_norm_.beta);
    Tensor<T> logits = head2_.forward(relu(head1_.forward(pooled)));
    return {logits, attn_block1};
  }

  NamedParams<T> named_parameters() const {
    NamedParams<T> p;
    embed_.collect("embed", p);
    p.emplace_back("pos_embed", pos_embed_);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect("block" + std::to_string(i), p);
    head_norm_.collect("head.norm", p);
    head1_.collect("head.fc1", p);
    head2_.collect("head.fc2", p);
    return p;
  }

  void set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& [name, t] : named_parameters()) t.set_requires_grad(!frozen);
  }
  bool frozen() const { return frozen_; }

  std::uint64_t checksum() const { return params_checksum(named_parameters()); }

  const TeacherConfig& config() const { return cfg_; }
  std::int64_t n_patches() const { return n_patches_; }

 private:
  void check_input(const Tensor<T>& image) const {
    if (image.ndim() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.image_size ||
        image.dim(3) != cfg_.image_size)
      throw DimError("teacher_forward: expected (B,3," + std::to_string(cfg_.image_size) + "," +
                     std::to_string(cfg_.image_size) + "), got " + shape_str(image.shape()));
  }

  TeacherConfig cfg_;
  std::int64_t n_patches_ = 0;
  bool frozen_ = false;
  PatchEmbed<T> embed_;
  Tensor<T> pos_embed_;
  std::vector<WindowAttentionBlock<T>> blocks_;
  NormParams<T> head_norm_;
  Linear<T> head1_, head2_;
};

struct StudentConfig {
  std::int64_t n_classes = 8;
  std::int64_t image_size = 64;
  std::int64_t stem_channels = 16;
  std::array<std::int64_t, 3> block_channels = {24, 48, 96};
  std::array<std::int64_t, 3> block_strides = {2, 2, 1};
  std::int64_t se_reduction = 4;
};

// Desk-scale depthwise-separable student. The feature map handed to the
// distillation path is the output of the final block, pre-classifier.
template <typename T>
class StudentModel {
 public:
  struct Output {
    Tensor<T> logits;    // (B, C)
    Tensor<T> features;  // (B, C_S, H_S, W_S)
  };

  // Per-layer fake-quant observation points, in forward order.
  static constexpr int kActObservers = 5;  // stem, block0, block1, block2, logits

  struct ActQuant {
    std::array<float, kActObservers> lo{};
    std::array<float, kActObservers> hi{};
  };

  StudentModel() = default;
  StudentModel(const StudentConfig& cfg, Rng rng) : cfg_(cfg), stem_norm_(cfg.stem_channels) {
    const T std_stem = static_cast<T>(std::sqrt(2.0 / (9.0 * 3.0)));
    stem_weight_ =
        Tensor<T>::randn({cfg.stem_channels, 3, 3, 3}, rng, std_stem).set_requires_grad(true);
    stem_bias_ = Tensor<T>::zeros({cfg.stem_channels}).set_requires_grad(true);
    std::int64_t c = cfg.stem_channels;
    const std::array<Act, 3> acts = {Act::Relu, Act::Hardswish, Act::Hardswish};
    for (int i = 0; i < 3; ++i) {
      blocks_.emplace_back(c, cfg.block_channels[static_cast<std::size_t>(i)],
                           cfg.block_strides[static_cast<std::size_t>(i)],
                           acts[static_cast<std::size_t>(i)], cfg.se_reduction, rng);
      c = cfg.block_channels[static_cast<std::size_t>(i)];
    }
    head_ = Linear<T>(c, cfg.n_classes, rng);
  }

  Output forward(const Tensor<T>& image, const ActQuant* aq = nullptr) const {
    return run(image, aq, nullptr);
  }

  // Forward pass that widens `ranges` to cover the activations seen at each
  // observation point; used to calibrate activation quantization.
  Output calibrate(const Tensor<T>& image, ActQuant& ranges) const {
    return run(image, nullptr, &ranges);
  }

  NamedParams<T> named_parameters() const {
    NamedParams<T> p;
    p.emplace_back("stem.weight", stem_weight_);
    p.emplace_back("stem.bias", stem_bias_);
    stem_norm_.collect("stem.norm", p);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect("block" + std::to_string(i), p);
    head_.collect("head", p);
    return p;
  }

  const StudentConfig& config() const { return cfg_; }
  const std::vector<DepthwiseSeparableBlock<T>>& blocks() const { return blocks_; }

  std::int64_t feature_spatial() const {
    std::int64_t s = cfg_.image_size / 2;  // stem stride 2
    for (auto st : cfg_.block_strides) s /= st;
    return s;
  }
  std::int64_t feature_channels() const { return cfg_.block_channels.back(); }

 private:
  void check_input(const Tensor<T>& image) const {
    if (image.ndim() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.image_size ||
        image.dim(3) != cfg_.image_size)
      throw DimError("student_forward: expected (B,3," + std::to_string(cfg_.image_size) + "," +
                     std::to_string(cfg_.image_size) + "), got " + shape_str(image.shape()));
  }

  Output run(const Tensor<T>& image, const ActQuant* aq, ActQuant* record) const {
    check_input(image);
    Tensor<T> x = standardize_input(image);
    x = relu(group_norm(conv2d(x, stem_weight_, &stem_bias_, 2, 1), stem_norm_.gamma,
                        stem_norm_.beta));
    x = observe(x, aq, record, 0);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      x = blocks_[i].forward(x);
      x = observe(x, aq, record, static_cast<int>(i) + 1);
    }
    Tensor<T> features = x;
    Tensor<T> logits = head_.forward(global_avg_pool(x));
    logits = observe(logits, aq, record, 4);
    return {logits, features};
  }

  // fake-quant observation point: round activations through the int8 grid
  static Tensor<T> observe(const Tensor<T>& x, const ActQuant* aq, ActQuant* record, int idx) {
    if (record) {
      for (T v : x.data()) {
        const float f = static_cast<float>(v);
        record->lo[static_cast<std::size_t>(idx)] =
            std::min(record->lo[static_cast<std::size_t>(idx)], f);
        record->hi[static_cast<std::size_t>(idx)] =
            std::max(record->hi[static_cast<std::size_t>(idx)], f);
      }
    }
    if (!aq) return x;
    const float lo = aq->lo[static_cast<std::size_t>(idx)];
    const float hi = aq->hi[static_cast<std::size_t>(idx)];
    const float scale = std::max((hi - lo) / 255.0f, 1e-8f);
    const float zp = std::round(-lo / scale) - 128.0f;
    std::vector<T> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      float q = std::round(static_cast<float>(x.data()[i]) / scale + zp);
      q = std::min(std::max(q, -128.0f), 127.0f);
      out[i] = static_cast<T>((q - zp) * scale);
    }
    return Tensor<T>(x.shape(), std::move(out));
  }

  StudentConfig cfg_;
  Tensor<T> stem_weight_, stem_bias_;
  NormParams<T> stem_norm_;
  std::vector<DepthwiseSeparableBlock<T>> blocks_;
  Linear<T> head_;
};

}  // namespace kd
