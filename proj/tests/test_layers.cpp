#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kd/gradcheck.hpp"
#include "kd/layers.hpp"

using namespace kd;

TEST_CASE("linear matches a direct dot product") {
  Rng rng(1);
  Linear<float> lin(3, 2, rng);
  Tensor<float> x({2, 3}, {1.0f, 2.0f, 3.0f, -1.0f, 0.5f, 0.0f});
  auto y = lin.forward(x);
  REQUIRE(y.shape() == Shape{2, 2});
  for (std::int64_t r = 0; r < 2; ++r)
    for (std::int64_t c = 0; c < 2; ++c) {
      double acc = lin.bias.data()[static_cast<std::size_t>(c)];
      for (std::int64_t k = 0; k < 3; ++k)
        acc += static_cast<double>(x.data()[static_cast<std::size_t>(r * 3 + k)]) *
               static_cast<double>(lin.weight.data()[static_cast<std::size_t>(k * 2 + c)]);
      REQUIRE(y.data()[static_cast<std::size_t>(r * 2 + c)] ==
              Catch::Approx(acc).margin(1e-5));
    }

  // leading dims are preserved
  Tensor<float> x3 = Tensor<float>::randn({2, 4, 3}, rng);
  REQUIRE(lin.forward(x3).shape() == Shape{2, 4, 2});
}

TEST_CASE("attention over identical tokens is uniform") {
  Rng rng(5);
  WindowAttentionBlock<float> block(8, 2, 16, rng);
  std::vector<float> row(8);
  for (auto& v : row) v = rng.normal() * 0.5f;
  std::vector<float> tokens;
  const std::int64_t N = 5;
  for (std::int64_t i = 0; i < N; ++i) tokens.insert(tokens.end(), row.begin(), row.end());
  auto out = block.forward(Tensor<float>({1, N, 8}, std::move(tokens)));
  REQUIRE(out.attn.shape() == Shape{1, 2, N, N});
  for (float v : out.attn.data())
    REQUIRE(v == Catch::Approx(1.0 / static_cast<double>(N)).margin(1e-6));
  REQUIRE(out.tokens.shape() == Shape{1, N, 8});
}

TEST_CASE("attention rows are normalized for arbitrary tokens") {
  Rng rng(9);
  WindowAttentionBlock<float> block(8, 4, 16, rng);
  auto out = block.forward(Tensor<float>::randn({3, 6, 8}, rng));
  const auto& a = out.attn.data();
  REQUIRE(out.attn.shape() == Shape{3, 4, 6, 6});
  for (std::size_t row = 0; row < a.size() / 6; ++row) {
    double s = 0;
    for (std::size_t k = 0; k < 6; ++k) s += a[row * 6 + k];
    REQUIRE(s == Catch::Approx(1.0).margin(1e-5));
  }
  REQUIRE_THROWS_AS(WindowAttentionBlock<float>(8, 3, 16, rng), ConfigError);
}

TEST_CASE("squeeze-excitation rescales each channel uniformly") {
  Rng rng(13);
  SqueezeExcitation<float> se(8, 4, rng);
  Tensor<float> x = Tensor<float>::randn({2, 8, 4, 4}, rng);
  // keep entries away from zero so the per-channel ratio is well defined
  for (auto& v : x.data()) v += (v >= 0 ? 1.0f : -1.0f);
  auto y = se.forward(x);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t c = 0; c < 8; ++c) {
      const std::size_t base = static_cast<std::size_t>((b * 8 + c) * 16);
      const double gate = y.data()[base] / x.data()[base];
      REQUIRE(gate > 0.0);
      REQUIRE(gate < 1.0);
      for (std::size_t i = 1; i < 16; ++i)
        REQUIRE(y.data()[base + i] / x.data()[base + i] == Catch::Approx(gate).margin(1e-5));
    }
  REQUIRE_THROWS_AS(SqueezeExcitation<float>(8, 3, rng), ConfigError);
}

TEST_CASE("depthwise stage keeps an impulse inside its channel") {
  Rng rng(17);
  DepthwiseSeparableBlock<float> block(4, 6, 1, Act::Relu, 2, rng);
  Tensor<float> x = Tensor<float>::zeros({1, 4, 7, 7});
  const std::int64_t hit = 2;
  x.data()[static_cast<std::size_t>((hit * 7 + 3) * 7 + 3)] = 1.0f;
  auto y = block.depthwise_forward(x);
  REQUIRE(y.shape() == Shape{1, 4, 7, 7});
  bool hit_channel_nonzero = false;
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 49; ++i) {
      const float v = y.data()[static_cast<std::size_t>(c * 49) + i];
      if (c == hit && std::abs(v) > 1e-6f) hit_channel_nonzero = true;
      if (c != hit) REQUIRE(v == Catch::Approx(0.0f).margin(1e-7));
    }
  REQUIRE(hit_channel_nonzero);
}

TEST_CASE("depthwise-separable block shape contract") {
  Rng rng(21);
  DepthwiseSeparableBlock<float> s2(4, 8, 2, Act::Hardswish, 2, rng);
  Tensor<float> x = Tensor<float>::randn({2, 4, 8, 8}, rng);
  REQUIRE(s2.forward(x).shape() == Shape{2, 8, 4, 4});
  DepthwiseSeparableBlock<float> s1(4, 8, 1, Act::Relu, 4, rng);
  REQUIRE(s1.forward(x).shape() == Shape{2, 8, 8, 8});
}

TEST_CASE("layer forwards pass grad_check") {
  Rng rng(25);
  Linear<double> lin(4, 3, rng);
  REQUIRE(grad_check<double>(
              [&](const Tensor<double>& t) {
                auto y = lin.forward(t);
                return sum_all(mul(y, y));
              },
              Tensor<double>::randn({2, 4}, rng)) < 1e-5);

  WindowAttentionBlock<double> block(6, 2, 12, rng);
  REQUIRE(grad_check<double>(
              [&](const Tensor<double>& t) {
                auto out = block.forward(t);
                return sum_all(mul(out.tokens, out.tokens));
              },
              Tensor<double>::randn({2, 4, 6}, rng)) < 1e-5);
  REQUIRE(grad_check<double>(
              [&](const Tensor<double>& t) {
                auto out = block.forward(t);
                return sum_all(mul(out.attn, out.attn));
              },
              Tensor<double>::randn({1, 3, 6}, rng)) < 1e-5);

  SqueezeExcitation<double> se(4, 2, rng);
  REQUIRE(grad_check<double>(
              [&](const Tensor<double>& t) {
                auto y = se.forward(t);
                return sum_all(mul(y, y));
              },
              Tensor<double>::randn({2, 4, 3, 3}, rng)) < 1e-5);

  DepthwiseSeparableBlock<double> dsb(4, 6, 2, Act::Hardswish, 2, rng);
  Tensor<double> x = Tensor<double>::randn({2, 4, 6, 6}, rng);
  // nudge away from the hardswish kinks
  for (auto& v : x.data())
    if (std::abs(std::abs(v) - 3.0) < 0.05) v += 0.2;
  REQUIRE(grad_check<double>(
              [&](const Tensor<double>& t) {
                auto y = dsb.forward(t);
                return sum_all(mul(y, y));
              },
              x) < 1e-4);
}

TEST_CASE("parameter collection uses stable dotted names") {
  Rng rng(29);
  DepthwiseSeparableBlock<float> block(4, 6, 1, Act::Relu, 2, rng);
  NamedParams<float> params;
  block.collect("block0", params);
  std::vector<std::string> names;
  for (const auto& [n, t] : params) names.push_back(n);
  const std::vector<std::string> expect = {
      "block0.dw.weight", "block0.dw.bias",  "block0.gn1.gamma", "block0.gn1.beta",
      "block0.se.fc1.weight", "block0.se.fc1.bias", "block0.se.fc2.weight",
      "block0.se.fc2.bias",   "block0.pw.weight",   "block0.pw.bias",
      "block0.gn2.gamma", "block0.gn2.beta"};
  REQUIRE(names == expect);
}
