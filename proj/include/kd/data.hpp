#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "kd/errors.hpp"
#include "kd/png_io.hpp"
#include "kd/rng.hpp"
#include "kd/tensor.hpp"

namespace kd::data {

enum class Tier { Easy, Hard };

inline Tier tier_from_string(const std::string& s) {
  if (s == "easy") return Tier::Easy;
  if (s == "hard") return Tier::Hard;
  throw ConfigError("unknown tier '" + s + "' (expected easy|hard)");
}

inline std::string tier_to_string(Tier t) { return t == Tier::Easy ? "easy" : "hard"; }

struct SyntheticSpec {
  std::int64_t n_classes = 8;
  std::int64_t images_per_class = 300;
  std::int64_t image_size = 64;
  Tier tier = Tier::Hard;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::int64_t image_size = 0;
  std::int64_t n_classes = 0;
  std::vector<std::string> class_names;
  std::vector<ImageU8> images;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> train_idx, val_idx, test_idx;
};

// ---------------------------------------------------------------------------
// synthetic lesion generator

namespace detail {

struct Rgb {
  double r, g, b;
};

struct SpotSpec {
  double x, y, radius;
  Rgb color;
  bool ring = false;  // dark ring around a brighter center
};

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

inline void blend_spot(std::vector<double>& img, std::int64_t S, const SpotSpec& s) {
  const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(s.x - s.radius - 2));
  const std::int64_t x1 = std::min(S - 1, static_cast<std::int64_t>(s.x + s.radius + 2));
  const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(s.y - s.radius - 2));
  const std::int64_t y1 = std::min(S - 1, static_cast<std::int64_t>(s.y + s.radius + 2));
  for (std::int64_t y = y0; y <= y1; ++y)
    for (std::int64_t x = x0; x <= x1; ++x) {
      const double d = std::hypot(static_cast<double>(x) - s.x, static_cast<double>(y) - s.y);
      const double alpha = 1.0 - smoothstep(s.radius - 1.0, s.radius + 0.5, d);
      if (alpha <= 0) continue;
      Rgb c = s.color;
      if (s.ring) {
        // brighter center fading into a dark rim
        const double rim = smoothstep(0.35 * s.radius, 0.9 * s.radius, d);
        c.r = c.r * (1.0 - rim) + 0.12 * rim;
        c.g = c.g * (1.0 - rim) + 0.08 * rim;
        c.b = c.b * (1.0 - rim) + 0.04 * rim;
      }
      double* px = img.data() + (y * S + x) * 3;
      px[0] = px[0] * (1.0 - alpha) + c.r * alpha;
      px[1] = px[1] * (1.0 - alpha) + c.g * alpha;
      px[2] = px[2] * (1.0 - alpha) + c.b * alpha;
    }
}

// low-resolution noise grid upsampled bilinearly; gives the leaf texture
inline void add_texture(std::vector<double>& img, std::int64_t S, Rng& rng, double amplitude) {
  constexpr std::int64_t G = 8;
  std::vector<double> grid(static_cast<std::size_t>(G * G));
  for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
  for (std::int64_t y = 0; y < S; ++y)
    for (std::int64_t x = 0; x < S; ++x) {
      const double gy = (static_cast<double>(y) + 0.5) * G / S - 0.5;
      const double gx = (static_cast<double>(x) + 0.5) * G / S - 0.5;
      const std::int64_t iy = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(gy)), 0, G - 1);
      const std::int64_t ix = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(gx)), 0, G - 1);
      const std::int64_t iy1 = std::min(iy + 1, G - 1), ix1 = std::min(ix + 1, G - 1);
      const double fy = std::clamp(gy - static_cast<double>(iy), 0.0, 1.0);
      const double fx = std::clamp(gx - static_cast<double>(ix), 0.0, 1.0);
      const double v = grid[static_cast<std::size_t>(iy * G + ix)] * (1 - fy) * (1 - fx) +
                       grid[static_cast<std::size_t>(iy * G + ix1)] * (1 - fy) * fx +
                       grid[static_cast<std::size_t>(iy1 * G + ix)] * fy * (1 - fx) +
                       grid[static_cast<std::size_t>(iy1 * G + ix1)] * fy * fx;
      double* px = img.data() + (y * S + x) * 3;
      px[0] += amplitude * v * 0.5;
      px[1] += amplitude * v;
      px[2] += amplitude * v * 0.4;
    }
}

struct ClassRecipe {
  std::int64_t count_lo = 0, count_hi = 0;
  double r_lo = 0, r_hi = 0;
  Rgb color{0, 0, 0};
  double color_jitter = 0.03;
  bool ring = false;
  bool streak = false;  // chains of small circles instead of round spots
};

// Hard-tier layout: one brown hue family and deliberately colliding pooled
// statistics. Classes 1/2 and 3/4 share count, size and color exactly and
// differ only in spot arrangement (tight clusters vs enforced spread), so
// separating them needs spatial structure rather than pooled cues; the
// remaining classes vary count and spot structure under shared clutter and
// lighting jitter.
inline void draw_hard_class(std::vector<double>& img, std::int64_t S, Rng& rng,
                            std::int64_t cls) {
  if (cls == 0) return;  // healthy
  const double scale = static_cast<double>(S) / 64.0;
  const Rgb brown{0.42, 0.24, 0.10};
  auto lesion = [&](double x, double y, double r, bool ring = false) {
    const double j = rng.uniform(-0.05, 0.05);
    SpotSpec s;
    s.x = std::clamp(x, 1.0, static_cast<double>(S - 2));
    s.y = std::clamp(y, 1.0, static_cast<double>(S - 2));
    s.radius = r;
    s.color = {std::clamp(brown.r + j, 0.0, 1.0), std::clamp(brown.g + j, 0.0, 1.0),
               std::clamp(brown.b + j, 0.0, 1.0)};
    s.ring = ring;
    detail::blend_spot(img, S, s);
  };
  auto center_in = [&](double margin) {
    const double lo = std::min(margin, static_cast<double>(S) / 2.0 - 1.0);
    const double hi = std::max(lo + 1e-3, static_cast<double>(S) - lo);
    return std::pair{rng.uniform(lo, hi), rng.uniform(lo, hi)};
  };
  // three spots around a center, pairwise at least min_sep apart
  auto triple = [&](double cx, double cy, double radius, double min_sep) {
    std::vector<std::pair<double, double>> pts;
    for (int k = 0; k < 3; ++k) {
      double x = cx, y = cy;
      for (int attempt = 0; attempt < 120; ++attempt) {
        const double ang = rng.uniform(0.0, 6.283185307179586);
        const double dist = radius * std::sqrt(rng.uniform(0.0, 1.0));
        x = cx + std::cos(ang) * dist;
        y = cy + std::sin(ang) * dist;
        bool ok = true;
        for (const auto& prev : pts)
          if (std::hypot(x - prev.first, y - prev.second) < min_sep) ok = false;
        if (ok) break;
      }
      pts.emplace_back(x, y);
      lesion(x, y, rng.uniform(2.8, 3.6) * std::max(scale, 0.5));
    }
  };
  // n well-separated tight clusters of three spots each
  auto clusters = [&](std::int64_t n_clusters) {
    const double cluster_r = std::max(3.0, 7.5 * scale);
    std::vector<std::pair<double, double>> centers;
    for (std::int64_t c = 0; c < n_clusters; ++c) {
      auto p = center_in(cluster_r + 5.0 * scale);
      for (int attempt = 0; attempt < 80; ++attempt) {
        bool ok = true;
        for (const auto& prev : centers)
          if (std::hypot(p.first - prev.first, p.second - prev.second) < 3.2 * cluster_r)
            ok = false;
        if (ok) break;
        p = center_in(cluster_r + 5.0 * scale);
      }
      centers.push_back(p);
      triple(p.first, p.second, cluster_r, 3.5 * scale);
    }
  };
  auto spread = [&](std::int64_t count, double min_frac) {
    const double min_d = min_frac * static_cast<double>(S);
    std::vector<std::pair<double, double>> pts;
    for (std::int64_t k = 0; k < count; ++k) {
      auto p = center_in(5.0 * scale);
      for (int attempt = 0; attempt < 200; ++attempt) {
        bool ok = true;
        for (const auto& prev : pts)
          if (std::hypot(p.first - prev.first, p.second - prev.second) < min_d) ok = false;
        if (ok) break;
        p = center_in(5.0 * scale);
      }
      pts.push_back(p);
      lesion(p.first, p.second, rng.uniform(2.8, 3.6) * std::max(scale, 0.5));
    }
  };

  switch (1 + (cls - 1) % 7) {
    case 1: clusters(1); break;             // 3 spots, one tight cluster
    case 2: spread(3, 0.30); break;         // same 3 spots, forced apart
    case 3: clusters(2); break;             // 6 spots, two tight clusters
    case 4: spread(6, 0.30); break;         // same 6 spots, forced apart
    case 5: {                               // ringed spots
      for (int k = 0; k < 3; ++k) {
        auto p = center_in(6.0 * scale);
        lesion(p.first, p.second, rng.uniform(3.5, 4.5) * std::max(scale, 0.5), true);
      }
      break;
    }
    case 6: {                               // streaks: chains of small circles
      for (int c = 0; c < 2; ++c) {
        auto p = center_in(8.0 * scale);
        const double ang = rng.uniform(0.0, 6.283185307179586);
        const double step = 2.2 * std::max(scale, 0.5);
        for (int m = 0; m < 6; ++m)
          lesion(p.first + std::cos(ang) * step * m, p.second + std::sin(ang) * step * m,
                 2.0 * std::max(scale, 0.5));
      }
      break;
    }
    default: {                              // many tiny specks
      for (int k = 0; k < 12; ++k) {
        auto p = center_in(3.0 * scale);
        lesion(p.first, p.second, rng.uniform(1.2, 2.0) * std::max(scale, 0.5));
      }
      break;
    }
  }
}

inline ClassRecipe class_recipe(std::int64_t cls) {
  // easy tier: well separated hue/count/size signatures (class 0 is healthy)
  switch (cls) {
    case 0: return {};
    case 1: return {3, 4, 2.0, 3.0, {0.45, 0.25, 0.10}};
    case 2: return {9, 12, 1.5, 2.5, {0.15, 0.10, 0.05}};
    case 3: return {2, 3, 6.0, 9.0, {0.75, 0.70, 0.20}};
    case 4: return {5, 7, 3.0, 4.5, {0.60, 0.60, 0.55}, 0.03, true};
    case 5: return {14, 20, 1.0, 1.8, {0.85, 0.85, 0.75}};
    case 6: return {1, 2, 10.0, 13.0, {0.30, 0.15, 0.05}};
    default: return {4, 6, 3.0, 4.0, {0.45, 0.15, 0.45}};
  }
}

}  // namespace detail

// Pure function of (spec, class, index): identical inputs give identical
// pixels. Values are quantized to the 8-bit grid at generation time, so
// in-memory datasets and the exported PNG layout round-trip exactly.
inline ImageU8 render_synthetic(const SyntheticSpec& spec, std::int64_t cls, std::int64_t index) {
  const std::int64_t S = spec.image_size;
  Rng rng = Rng::child(spec.seed, "image/" + std::to_string(cls) + "/" + std::to_string(index));
  std::vector<double> img(static_cast<std::size_t>(S * S * 3));

  const bool hard = spec.tier == Tier::Hard;
  // leaf-green base; the hard tier varies it per image, the easy tier keeps
  // it fixed so raw pixel distance stays a usable class signal
  const double base_g = hard ? rng.uniform(0.42, 0.58) : 0.50;
  const double base_r = base_g * (hard ? rng.uniform(0.30, 0.45) : 0.36);
  const double base_b = base_g * (hard ? rng.uniform(0.20, 0.35) : 0.28);
  for (std::int64_t i = 0; i < S * S; ++i) {
    img[static_cast<std::size_t>(i * 3 + 0)] = base_r;
    img[static_cast<std::size_t>(i * 3 + 1)] = base_g;
    img[static_cast<std::size_t>(i * 3 + 2)] = base_b;
  }
  detail::add_texture(img, S, rng, hard ? 0.10 : 0.02);

  if (hard) {
    detail::draw_hard_class(img, S, rng, cls);
  } else {
    // easy tier: class-deterministic spot layout with small per-image jitter
    const auto recipe = detail::class_recipe(cls);
    const double margin = std::max(recipe.r_hi, 2.0) + 1.0;
    auto jitter = [&](double v) {
      return std::clamp(v + rng.uniform(-recipe.color_jitter, recipe.color_jitter), 0.0, 1.0);
    };
    Rng layout_rng = Rng::child(spec.seed, "layout/" + std::to_string(cls));
    for (std::int64_t k = 0; k < recipe.count_hi; ++k) {
      detail::SpotSpec s;
      s.x = std::clamp(layout_rng.uniform(margin, static_cast<double>(S) - margin) +
                           rng.uniform(-1.5, 1.5),
                       1.0, static_cast<double>(S - 2));
      s.y = std::clamp(layout_rng.uniform(margin, static_cast<double>(S) - margin) +
                           rng.uniform(-1.5, 1.5),
                       1.0, static_cast<double>(S - 2));
      s.radius = 0.5 * (recipe.r_lo + recipe.r_hi) + rng.uniform(-0.3, 0.3);
      s.color = {jitter(recipe.color.r), jitter(recipe.color.g), jitter(recipe.color.b)};
      s.ring = recipe.ring;
      if (recipe.streak) {
        // chain of small circles along a random direction
        const double angle = rng.uniform(0.0, 6.283185307179586);
        const double step = 2.2;
        for (int m = 0; m < 6; ++m) {
          detail::SpotSpec seg = s;
          seg.x = std::clamp(s.x + std::cos(angle) * step * m, 1.0, static_cast<double>(S - 2));
          seg.y = std::clamp(s.y + std::sin(angle) * step * m, 1.0, static_cast<double>(S - 2));
          detail::blend_spot(img, S, seg);
        }
      } else {
        detail::blend_spot(img, S, s);
      }
    }
  }

  if (hard) {
    // clutter specks common to every class
    const std::int64_t clutter = rng.uniform_int(3, 6);
    for (std::int64_t k = 0; k < clutter; ++k) {
      detail::SpotSpec s;
      s.x = rng.uniform(2.0, static_cast<double>(S) - 2.0);
      s.y = rng.uniform(2.0, static_cast<double>(S) - 2.0);
      s.radius = rng.uniform(0.8, 1.5);
      s.color = {0.10, 0.20, 0.06};
      detail::blend_spot(img, S, s);
    }
    // global illumination jitter defeats raw-pixel nearest neighbours
    const double light = rng.uniform(0.65, 1.30);
    for (auto& v : img) v *= light;
  }

  // fine per-pixel grain
  for (auto& v : img) v += rng.uniform(-0.015, 0.015);

  ImageU8 out;
  out.width = S;
  out.height = S;
  out.rgb.resize(static_cast<std::size_t>(S * S * 3));
  for (std::size_t i = 0; i < img.size(); ++i)
    out.rgb[i] = static_cast<std::uint8_t>(std::clamp(img[i], 0.0, 1.0) * 255.0 + 0.5);
  return out;
}

// ---------------------------------------------------------------------------
// splitting

// Stratified 70/20/10 with a seeded shuffle; splits are disjoint, exhaustive
// and within one sample per class of the exact ratios.
inline void stratified_split(Dataset& ds, std::uint64_t seed) {
  ds.train_idx.clear();
  ds.val_idx.clear();
  ds.test_idx.clear();
  for (std::int64_t c = 0; c < ds.n_classes; ++c) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
      if (ds.labels[i] == c) idx.push_back(static_cast<std::int64_t>(i));
    if (idx.empty()) throw DataError("class " + std::to_string(c) + " has no samples");
    Rng rng = Rng::child(seed, "split/" + std::to_string(c));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    const std::int64_t n_val = static_cast<std::int64_t>(std::llround(0.2 * static_cast<double>(n)));
    const std::int64_t n_test = static_cast<std::int64_t>(std::llround(0.1 * static_cast<double>(n)));
    const std::int64_t n_train = n - n_val - n_test;
    for (std::int64_t i = 0; i < n; ++i) {
      if (i < n_train)
        ds.train_idx.push_back(idx[static_cast<std::size_t>(i)]);
      else if (i < n_train + n_val)
        ds.val_idx.push_back(idx[static_cast<std::size_t>(i)]);
      else
        ds.test_idx.push_back(idx[static_cast<std::size_t>(i)]);
    }
  }
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
  std::sort(ds.val_idx.begin(), ds.val_idx.end());
  std::sort(ds.test_idx.begin(), ds.test_idx.end());
}

inline Dataset generate(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  Dataset ds;
  ds.image_size = spec.image_size;
  ds.n_classes = spec.n_classes;
  for (std::int64_t c = 0; c < spec.n_classes; ++c)
    ds.class_names.push_back("class_" + std::to_string(c));
  for (std::int64_t c = 0; c < spec.n_classes; ++c)
    for (std::int64_t i = 0; i < spec.images_per_class; ++i) {
      ds.images.push_back(render_synthetic(spec, c, i));
      ds.labels.push_back(c);
    }
  stratified_split(ds, spec.seed);
  return ds;
}

// ---------------------------------------------------------------------------
// raw-pixel helpers (pre-graph; not autodiff ops)

// planar float CHW in [0,1]
inline std::vector<float> to_chw(const ImageU8& img) {
  const std::int64_t n = img.width * img.height;
  std::vector<float> out(static_cast<std::size_t>(3 * n));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < 3; ++c)
      out[static_cast<std::size_t>(c * n + i)] =
          static_cast<float>(img.rgb[static_cast<std::size_t>(i * 3 + c)]) / 255.0f;
  return out;
}

// bilinear resize of planar CHW float, half-pixel centers
inline std::vector<float> resize_chw(const std::vector<float>& src, std::int64_t h,
                                     std::int64_t w, std::int64_t oh, std::int64_t ow) {
  std::vector<float> out(static_cast<std::size_t>(3 * oh * ow));
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < oh; ++y) {
      double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                             static_cast<double>(h - 1));
      const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
      const std::int64_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::int64_t x = 0; x < ow; ++x) {
        double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                               static_cast<double>(w - 1));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
        const std::int64_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double v00 = src[static_cast<std::size_t>((c * h + y0) * w + x0)];
        const double v01 = src[static_cast<std::size_t>((c * h + y0) * w + x1)];
        const double v10 = src[static_cast<std::size_t>((c * h + y1) * w + x0)];
        const double v11 = src[static_cast<std::size_t>((c * h + y1) * w + x1)];
        out[static_cast<std::size_t>((c * oh + y) * ow + x)] = static_cast<float>(
            (v00 * (1 - wx) + v01 * wx) * (1 - wy) + (v10 * (1 - wx) + v11 * wx) * wy);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// augmentation (training split only)

struct AugmentConfig {
  bool rotate90 = true;
  bool small_rotation = true;  // +-15 degrees, bilinear
  bool flips = true;
  bool color_jitter = true;  // brightness/contrast/saturation +-20%
  bool gaussian_noise = true;
  double noise_sigma = 0.02;

  static AugmentConfig disabled() { return {false, false, false, false, false, 0.0}; }
};

// CHW float image in [0,1]; output stays in [0,1]
inline std::vector<float> augment(const std::vector<float>& src, std::int64_t size, Rng& rng,
                                  const AugmentConfig& cfg = {}) {
  const std::int64_t S = size;
  const std::int64_t n = S * S;
  std::vector<float> img = src;

  auto index_remap = [&](auto&& map_xy) {
    std::vector<float> out(img.size());
    for (std::int64_t y = 0; y < S; ++y)
      for (std::int64_t x = 0; x < S; ++x) {
        auto [sx, sy] = map_xy(x, y);
        for (std::int64_t c = 0; c < 3; ++c)
          out[static_cast<std::size_t>(c * n + y * S + x)] =
              img[static_cast<std::size_t>(c * n + sy * S + sx)];
      }
    img = std::move(out);
  };

  if (cfg.rotate90) {
    const std::int64_t k = rng.uniform_int(0, 3);
    if (k == 1)
      index_remap([&](std::int64_t x, std::int64_t y) { return std::pair{y, S - 1 - x}; });
    else if (k == 2)
      index_remap([&](std::int64_t x, std::int64_t y) { return std::pair{S - 1 - x, S - 1 - y}; });
    else if (k == 3)
      index_remap([&](std::int64_t x, std::int64_t y) { return std::pair{S - 1 - y, x}; });
  }
  if (cfg.small_rotation) {
    const double angle = rng.uniform(-15.0, 15.0) * 3.14159265358979323846 / 180.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double cx = (static_cast<double>(S) - 1) / 2.0;
    std::vector<float> out(img.size());
    for (std::int64_t y = 0; y < S; ++y)
      for (std::int64_t x = 0; x < S; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cx;
        const double fx = std::clamp(ca * dx + sa * dy + cx, 0.0, static_cast<double>(S - 1));
        const double fy = std::clamp(-sa * dx + ca * dy + cx, 0.0, static_cast<double>(S - 1));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
        const std::int64_t x1 = std::min(x0 + 1, S - 1), y1 = std::min(y0 + 1, S - 1);
        const double wx = fx - static_cast<double>(x0), wy = fy - static_cast<double>(y0);
        for (std::int64_t c = 0; c < 3; ++c) {
          const double v00 = img[static_cast<std::size_t>(c * n + y0 * S + x0)];
          const double v01 = img[static_cast<std::size_t>(c * n + y0 * S + x1)];
          const double v10 = img[static_cast<std::size_t>(c * n + y1 * S + x0)];
          const double v11 = img[static_cast<std::size_t>(c * n + y1 * S + x1)];
          out[static_cast<std::size_t>(c * n + y * S + x)] = static_cast<float>(
              (v00 * (1 - wx) + v01 * wx) * (1 - wy) + (v10 * (1 - wx) + v11 * wx) * wy);
        }
      }
    img = std::move(out);
  }
  if (cfg.flips) {
    if (rng.bernoulli(0.5))
      index_remap([&](std::int64_t x, std::int64_t y) { return std::pair{S - 1 - x, y}; });
    if (rng.bernoulli(0.5))
      index_remap([&](std::int64_t x, std::int64_t y) { return std::pair{x, S - 1 - y}; });
  }
  if (cfg.color_jitter) {
    const float brightness = static_cast<float>(rng.uniform(0.8, 1.2));
    const float contrast = static_cast<float>(rng.uniform(0.8, 1.2));
    const float saturation = static_cast<float>(rng.uniform(0.8, 1.2));
    for (std::int64_t i = 0; i < n; ++i) {
      float r = img[static_cast<std::size_t>(i)];
      float g = img[static_cast<std::size_t>(n + i)];
      float b = img[static_cast<std::size_t>(2 * n + i)];
      const float gray = 0.299f * r + 0.587f * g + 0.114f * b;
      r = gray + (r - gray) * saturation;
      g = gray + (g - gray) * saturation;
      b = gray + (b - gray) * saturation;
      r = (r - 0.5f) * contrast + 0.5f;
      g = (g - 0.5f) * contrast + 0.5f;
      b = (b - 0.5f) * contrast + 0.5f;
      img[static_cast<std::size_t>(i)] = r * brightness;
      img[static_cast<std::size_t>(n + i)] = g * brightness;
      img[static_cast<std::size_t>(2 * n + i)] = b * brightness;
    }
  }
  if (cfg.gaussian_noise) {
    for (auto& v : img) v += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
  }
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

// ---------------------------------------------------------------------------
// batch assembly

template <typename T>
Tensor<T> make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices,
                     std::vector<std::int64_t>* labels_out = nullptr, Rng* aug_rng = nullptr,
                     const AugmentConfig* aug_cfg = nullptr) {
  const std::int64_t B = static_cast<std::int64_t>(indices.size());
  const std::int64_t S = ds.image_size;
  const std::int64_t per = 3 * S * S;
  std::vector<T> out(static_cast<std::size_t>(B * per));
  if (labels_out) labels_out->clear();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto idx = static_cast<std::size_t>(indices[static_cast<std::size_t>(b)]);
    std::vector<float> chw = to_chw(ds.images[idx]);
    if (aug_rng && aug_cfg) chw = augment(chw, S, *aug_rng, *aug_cfg);
    for (std::int64_t i = 0; i < per; ++i)
      out[static_cast<std::size_t>(b * per + i)] = static_cast<T>(chw[static_cast<std::size_t>(i)]);
    if (labels_out) labels_out->push_back(ds.labels[idx]);
  }
  return Tensor<T>({B, 3, S, S}, std::move(out));
}

// ---------------------------------------------------------------------------
// directory layout: root/<class_name>/*.png

inline void export_directory(const Dataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::vector<std::int64_t> counters(static_cast<std::size_t>(ds.n_classes), 0);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto cls = static_cast<std::size_t>(ds.labels[i]);
    const fs::path dir = fs::path(root) / ds.class_names[cls];
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05lld.png",
                  static_cast<long long>(counters[cls]++));
    write_png_rgb8((dir / name).string(), ds.images[i]);
  }
}

struct LoadReport {
  std::int64_t loaded = 0;
  std::int64_t skipped = 0;
};

inline Dataset load_directory(const std::string& root, std::int64_t image_size,
                              std::uint64_t seed, LoadReport* report = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root);
  Dataset ds;
  ds.image_size = image_size;
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2) throw DataError("dataset needs at least 2 class directories");
  ds.n_classes = static_cast<std::int64_t>(class_dirs.size());
  ds.class_names = class_dirs;
  LoadReport rep;
  for (std::int64_t c = 0; c < ds.n_classes; ++c) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[static_cast<std::size_t>(c)]))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    std::int64_t ok = 0;
    for (const auto& f : files) {
      try {
        ImageU8 img = read_png_rgb8(f);
        if (img.width != image_size || img.height != image_size) {
          std::vector<float> chw = resize_chw(to_chw(img), img.height, img.width, image_size, image_size);
          ImageU8 resized;
          resized.width = resized.height = image_size;
          resized.rgb.resize(static_cast<std::size_t>(image_size * image_size * 3));
          const std::int64_t n = image_size * image_size;
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < 3; ++ch)
              resized.rgb[static_cast<std::size_t>(i * 3 + ch)] = static_cast<std::uint8_t>(
                  std::clamp(chw[static_cast<std::size_t>(ch * n + i)], 0.0f, 1.0f) * 255.0f + 0.5f);
          img = std::move(resized);
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(c);
        ++ok;
      } catch (const Error& e) {
        std::cerr << "warning: skipping unreadable file " << f << " (" << e.what() << ")\n";
        ++rep.skipped;
      }
    }
    if (ok == 0) throw DataError("class directory has no readable images: " + class_dirs[static_cast<std::size_t>(c)]);
    rep.loaded += ok;
  }
  stratified_split(ds, seed);
  if (report) *report = rep;
  return ds;
}

}  // namespace kd::data
