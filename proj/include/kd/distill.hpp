#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kd/data.hpp"
#include "kd/metrics.hpp"
#include "kd/models.hpp"
#include "kd/optim.hpp"

namespace kd {

struct DistillConfig {
  double tau = 6.0;
  double alpha = 0.7;
  double beta = 0.3;
  std::int64_t batch_size = 32;
  std::int64_t epochs = 60;
  AdamWConfig optimizer{1e-3, 0.01, 0.9, 0.999, 1e-8};
  // cosine decay of the learning rate from optimizer.lr down to
  // lr_min_frac * optimizer.lr over the configured epoch count
  bool cosine_lr = true;
  double lr_min_frac = 0.05;
  std::int64_t early_stop_patience = 8;
  std::int64_t c_common = 32;
  // let gradient reach the teacher-side adapter g_T through the KL target
  bool train_teacher_adapter = false;
  std::uint64_t seed = 0;

  // teacher pretraining
  bool use_focal = false;
  double focal_gamma = 2.0;

  bool augment = true;
  // cache teacher logits/attention per training image; only valid when
  // augmentation is disabled
  bool cache_teacher = false;

  void validate() const {
    if (!(tau >= 1e-6)) throw ConfigError("tau must be >= 1e-6");
    if (alpha < 0 || beta < 0) throw ConfigError("alpha and beta must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c_common < 1) throw ConfigError("c_common must be >= 1");
    if (!(lr_min_frac > 0 && lr_min_frac <= 1))
      throw ConfigError("lr_min_frac must be in (0, 1]");
    if (cache_teacher && augment)
      throw ConfigError("teacher caching requires augmentation to be disabled");
  }
};

// 1x1 projections of the teacher attention map and the student feature map
// into a shared channel dimension. The student-side projection g_S always
// trains jointly with the student. The teacher-side projection g_T starts
// as a neutral channel average and by default stays fixed inside the
// detached target path; with train_gt it joins the optimized parameters and
// receives gradient through the KL target, which lets the target drift
// toward the student instead of teaching it.
template <typename T>
struct ChannelAdapters {
  ChannelAdapters() = default;
  ChannelAdapters(std::int64_t teacher_in, std::int64_t student_in, std::int64_t common, Rng rng,
                  bool train_gt_ = false)
      : c_common(common), train_gt(train_gt_) {
    const T std_s = static_cast<T>(std::sqrt(1.0 / static_cast<double>(student_in)));
    gt_weight = Tensor<T>::full({common, teacher_in, 1, 1},
                                T(1) / static_cast<T>(teacher_in)).set_requires_grad(true);
    gt_bias = Tensor<T>::zeros({common}).set_requires_grad(true);
    gs_weight = Tensor<T>::randn({common, student_in, 1, 1}, rng, std_s).set_requires_grad(true);
    gs_bias = Tensor<T>::zeros({common}).set_requires_grad(true);
  }

  std::vector<Tensor<T>> params() const { return {gt_weight, gt_bias, gs_weight, gs_bias}; }

  std::int64_t c_common = 0;
  bool train_gt = false;
  Tensor<T> gt_weight, gt_bias, gs_weight, gs_bias;
};

// (B, Nh, Np, Np) -> (B, 1, P, P) with P = sqrt(Np): average over heads,
// then over the query axis, giving per-patch received attention on the grid.
template <typename T>
Tensor<T> teacher_attention_to_spatial(const Tensor<T>& attn) {
  if (attn.ndim() != 4 || attn.dim(2) != attn.dim(3))
    throw DimError("teacher_attention_to_spatial: expected (B,Nh,Np,Np), got " +
                   shape_str(attn.shape()));
  const auto B = attn.dim(0), Nh = attn.dim(1), Np = attn.dim(2);
  const auto P = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(Np))));
  if (P * P != Np)
    throw ConfigError("teacher_attention_to_spatial: patch count " + std::to_string(Np) +
                      " is not a perfect square");
  std::vector<T> out(static_cast<std::size_t>(B * Np), T(0));
  const T* a = attn.data().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t h = 0; h < Nh; ++h)
      for (std::int64_t i = 0; i < Np; ++i)
        for (std::int64_t j = 0; j < Np; ++j)
          out[static_cast<std::size_t>(b * Np + j)] += a[((b * Nh + h) * Np + i) * Np + j];
  const T inv = T(1) / static_cast<T>(Nh * Np);
  for (auto& v : out) v *= inv;
  return Tensor<T>::make_op({B, 1, P, P}, std::move(out), {attn},
                            [attn, B, Nh, Np](auto& node) mutable {
    if (!attn.requires_grad()) return;
    attn.node()->ensure_grad();
    const T inv = T(1) / static_cast<T>(Nh * Np);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t h = 0; h < Nh; ++h)
        for (std::int64_t i = 0; i < Np; ++i)
          for (std::int64_t j = 0; j < Np; ++j)
            attn.grad()[static_cast<std::size_t>(((b * Nh + h) * Np + i) * Np + j)] +=
                node.grad[static_cast<std::size_t>(b * Np + j)] * inv;
  });
}

template <typename T>
struct AlignedMaps {
  Tensor<T> p_teacher;  // (B, K)
  Tensor<T> p_student;  // (B, K)
};

// Project both branches to c_common channels, resize the teacher map to the
// student's spatial size, flatten and softmax-normalize over all
// K = c_common * H_S * W_S positions. By default the teacher branch is
// evaluated without recording gradients: it is the distillation target, and
// letting the target adapt lets the loss shrink without teaching the
// student. The raw teacher map is detached in both configurations.
template <typename T>
AlignedMaps<T> align(const Tensor<T>& teacher_spatial, const Tensor<T>& student_features,
                     const ChannelAdapters<T>& adapters) {
  const auto B = student_features.dim(0);
  const auto Hs = student_features.dim(2), Ws = student_features.dim(3);
  const std::int64_t K = adapters.c_common * Hs * Ws;
  AlignedMaps<T> out;
  auto teacher_branch = [&] {
    Tensor<T> t = conv2d(teacher_spatial.detach(), adapters.gt_weight, &adapters.gt_bias, 1, 0);
    t = bilinear_resize(t, Hs, Ws);
    out.p_teacher = softmax(reshape(t, {B, K}), 1);
  };
  if (adapters.train_gt) {
    teacher_branch();
  } else {
    NoGradGuard ng;
    teacher_branch();
  }
  Tensor<T> s = conv2d(student_features, adapters.gs_weight, &adapters.gs_bias, 1, 0);
  out.p_student = softmax(reshape(s, {B, K}), 1);
  return out;
}

// tau^2-scaled batch-mean KL between temperature-softened distributions;
// teacher logits are detached so gradient reaches only the student.
template <typename T>
Tensor<T> loss_logit(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, T tau) {
  detail::check_same_shape(teacher_logits, student_logits, "loss_logit");
  Tensor<T> p = softmax(teacher_logits.detach(), 1, tau);
  Tensor<T> q = softmax(student_logits, 1, tau);
  return mul_scalar(kl_div(p, q, 1), tau * tau);
}

// batch-mean KL between aligned attention distributions
template <typename T>
Tensor<T> loss_attn(const Tensor<T>& p_teacher, const Tensor<T>& p_student) {
  detail::check_same_shape(p_teacher, p_student, "loss_attn");
  return kl_div(p_teacher, p_student, 1);
}

// L_total = L_CE + alpha * L_logit + beta * L_attn; with alpha = beta = 0
// this is exactly the supervised loss.
template <typename T>
Tensor<T> loss_total(const Tensor<T>& l_ce, const std::optional<Tensor<T>>& l_logit,
                     const std::optional<Tensor<T>>& l_attn, T alpha, T beta) {
  Tensor<T> total = l_ce;
  if (alpha != T(0) && l_logit) total = add(total, mul_scalar(*l_logit, alpha));
  if (beta != T(0) && l_attn) total = add(total, mul_scalar(*l_attn, beta));
  return total;
}

// ---------------------------------------------------------------------------
// reports

struct EpochRow {
  std::int64_t epoch = 0;
  double loss_total = 0, loss_ce = 0, loss_logit = 0, loss_attn = 0;
  double val_acc = 0, val_f1 = 0;
};

struct TrainReport {
  std::vector<EpochRow> epochs;
  std::int64_t best_epoch = 0;
  double best_val_acc = 0;
};

struct SweepRow {
  double tau = 0;
  double test_acc = 0, f1 = 0, auc = 0, map = 0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
};

namespace detail_report {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail_report

inline void write_train_report_csv(const TrainReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << "epoch,loss_total,loss_ce,loss_logit,loss_attn,val_acc,val_f1\n";
  for (const auto& e : r.epochs)
    f << e.epoch << ',' << detail_report::fmt(e.loss_total) << ','
      << detail_report::fmt(e.loss_ce) << ',' << detail_report::fmt(e.loss_logit) << ','
      << detail_report::fmt(e.loss_attn) << ',' << detail_report::fmt(e.val_acc) << ','
      << detail_report::fmt(e.val_f1) << '\n';
}

inline void write_sweep_report_csv(const SweepReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << "tau,test_acc,f1,auc,map\n";
  for (const auto& row : r.rows)
    f << detail_report::fmt(row.tau) << ',' << detail_report::fmt(row.test_acc) << ','
      << detail_report::fmt(row.f1) << ',' << detail_report::fmt(row.auc) << ','
      << detail_report::fmt(row.map) << '\n';
}

// ---------------------------------------------------------------------------
// evaluation helper

template <typename Model, typename T = float>
metrics::EvalResult evaluate_model(const Model& model, const data::Dataset& ds,
                                   const std::vector<std::int64_t>& indices,
                                   std::int64_t batch_size) {
  NoGradGuard ng;
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  if (n == 0) throw DataError("evaluate_model: empty index set");
  std::vector<double> probs(static_cast<std::size_t>(n * ds.n_classes));
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t stop = std::min(start + batch_size, n);
    std::vector<std::int64_t> chunk(indices.begin() + start, indices.begin() + stop);
    std::vector<std::int64_t> lab;
    Tensor<T> x = data::make_batch<T>(ds, chunk, &lab);
    Tensor<T> logits = model.forward(x).logits;
    Tensor<T> p = softmax(logits, 1);
    for (std::int64_t b = 0; b < stop - start; ++b) {
      labels[static_cast<std::size_t>(start + b)] = lab[static_cast<std::size_t>(b)];
      for (std::int64_t c = 0; c < ds.n_classes; ++c)
        probs[static_cast<std::size_t>((start + b) * ds.n_classes + c)] =
            static_cast<double>(p.data()[static_cast<std::size_t>(b * ds.n_classes + c)]);
    }
  }
  return metrics::evaluate(probs, n, ds.n_classes, labels);
}

// ---------------------------------------------------------------------------
// training loops

namespace detail_train {

template <typename T>
std::vector<std::vector<T>> snapshot(const std::vector<Tensor<T>>& params) {
  std::vector<std::vector<T>> s;
  s.reserve(params.size());
  for (const auto& p : params) s.push_back(p.data());
  return s;
}

template <typename T>
void restore(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].data() = s[i];
}

inline std::vector<std::int64_t> shuffled_epoch_order(const std::vector<std::int64_t>& idx,
                                                      std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::int64_t> order = idx;
  Rng rng = Rng::child(seed, "shuffle/" + std::to_string(epoch));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1],
              order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return order;
}

inline double epoch_lr(const DistillConfig& cfg, std::int64_t epoch) {
  if (!cfg.cosine_lr || cfg.epochs <= 1) return cfg.optimizer.lr;
  const double t = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
  const double frac =
      cfg.lr_min_frac + (1.0 - cfg.lr_min_frac) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  return cfg.optimizer.lr * frac;
}

}  // namespace detail_train

// Phase 1: teacher pretraining with CE or focal loss, early stopping on
// validation accuracy (fixed validated split in place of k-fold rotation).
template <typename T = float>
TrainReport run_teacher_pretrain(TeacherModel<T>& teacher, const data::Dataset& ds,
                                 const DistillConfig& cfg) {
  cfg.validate();
  if (ds.train_idx.empty() || ds.val_idx.empty()) throw DataError("empty train or val split");
  teacher.set_frozen(false);

  std::vector<Tensor<T>> params;
  for (auto& [name, t] : teacher.named_parameters()) params.push_back(t);
  AdamW<T> opt(params, cfg.optimizer);

  TrainReport report;
  std::vector<std::vector<T>> best;
  std::int64_t since_best = 0;
  data::AugmentConfig aug_cfg;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_lr(detail_train::epoch_lr(cfg, epoch));
    auto order = detail_train::shuffled_epoch_order(ds.train_idx, cfg.seed, epoch);
    Rng aug_rng = Rng::child(cfg.seed, "augment/" + std::to_string(epoch));
    double ce_sum = 0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::int64_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<std::int64_t> labels;
      Tensor<T> x = data::make_batch<T>(ds, chunk, &labels, cfg.augment ? &aug_rng : nullptr,
                                        cfg.augment ? &aug_cfg : nullptr);
      Tensor<T> logits = teacher.forward(x).logits;
      Tensor<T> loss = cfg.use_focal
                           ? focal_loss(logits, labels, static_cast<T>(cfg.focal_gamma))
                           : cross_entropy(logits, labels);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw TrainError("teacher loss diverged (non-finite) at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
      ce_sum += lv;
      ++batches;
    }
    auto val = evaluate_model(teacher, ds, ds.val_idx, cfg.batch_size);
    EpochRow row;
    row.epoch = epoch;
    row.loss_total = row.loss_ce = ce_sum / static_cast<double>(batches);
    row.val_acc = val.accuracy;
    row.val_f1 = val.f1_macro;
    report.epochs.push_back(row);

    if (val.accuracy > report.best_val_acc || best.empty()) {
      report.best_val_acc = val.accuracy;
      report.best_epoch = epoch;
      best = detail_train::snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  detail_train::restore(params, best);
  return report;
}

// Cached teacher outputs per training image (valid only without augmentation).
template <typename T>
struct TeacherCache {
  std::unordered_map<std::int64_t, std::vector<T>> logits;   // (C)
  std::unordered_map<std::int64_t, std::vector<T>> spatial;  // (P*P)
  std::int64_t n_classes = 0, grid = 0;
};

template <typename T>
TeacherCache<T> build_teacher_cache(const TeacherModel<T>& teacher, const data::Dataset& ds,
                                    const std::vector<std::int64_t>& indices,
                                    std::int64_t batch_size) {
  NoGradGuard ng;
  TeacherCache<T> cache;
  cache.n_classes = teacher.config().n_classes;
  cache.grid = teacher.config().image_size / teacher.config().patch;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::int64_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                    indices.begin() + static_cast<std::ptrdiff_t>(stop));
    Tensor<T> x = data::make_batch<T>(ds, chunk);
    auto out = teacher.forward(x);
    Tensor<T> spatial = teacher_attention_to_spatial(out.attention);
    const std::int64_t C = cache.n_classes, G2 = cache.grid * cache.grid;
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::vector<T> z(out.logits.data().begin() + static_cast<std::ptrdiff_t>(b * C),
                       out.logits.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * C));
      std::vector<T> s(spatial.data().begin() + static_cast<std::ptrdiff_t>(b * G2),
                       spatial.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * G2));
      cache.logits.emplace(chunk[b], std::move(z));
      cache.spatial.emplace(chunk[b], std::move(s));
    }
  }
  return cache;
}

// Phase 2: hybrid distillation (Algorithm-1-style loop). The teacher stays
// frozen; the student and both channel adapters are updated. With
// alpha = beta = 0 the loop skips all teacher work and is bit-identical to
// plain supervised training of the student.
template <typename T = float>
TrainReport run_distillation(const TeacherModel<T>* teacher, StudentModel<T>& student,
                             const data::Dataset& ds, const DistillConfig& cfg,
                             ChannelAdapters<T>* adapters_out = nullptr) {
  cfg.validate();
  if (ds.train_idx.empty() || ds.val_idx.empty()) throw DataError("empty train or val split");
  const bool use_logit = cfg.alpha > 0;
  const bool use_attn = cfg.beta > 0;
  if ((use_logit || use_attn) && !teacher)
    throw ConfigError("distillation with alpha > 0 or beta > 0 requires a teacher");
  if (teacher && !teacher->frozen())
    throw ConfigError("teacher must be frozen before distillation");

  ChannelAdapters<T> adapters;
  if (use_attn)
    adapters = ChannelAdapters<T>(1, student.feature_channels(), cfg.c_common,
                                  Rng::child(cfg.seed, "adapters"), cfg.train_teacher_adapter);

  std::vector<Tensor<T>> params;
  for (auto& [name, t] : student.named_parameters()) params.push_back(t);
  if (use_attn)
    for (auto& t : adapters.params()) params.push_back(t);
  AdamW<T> opt(params, cfg.optimizer);

  TeacherCache<T> cache;
  const bool cached = cfg.cache_teacher && (use_logit || use_attn);
  if (cached) cache = build_teacher_cache(*teacher, ds, ds.train_idx, cfg.batch_size);

  const T tau = static_cast<T>(cfg.tau);
  const T alpha = static_cast<T>(cfg.alpha);
  const T beta = static_cast<T>(cfg.beta);

  TrainReport report;
  std::vector<std::vector<T>> best;
  std::int64_t since_best = 0;
  data::AugmentConfig aug_cfg;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_lr(detail_train::epoch_lr(cfg, epoch));
    auto order = detail_train::shuffled_epoch_order(ds.train_idx, cfg.seed, epoch);
    Rng aug_rng = Rng::child(cfg.seed, "augment/" + std::to_string(epoch));
    double sum_total = 0, sum_ce = 0, sum_logit = 0, sum_attn = 0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::int64_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(stop));
      const std::int64_t B = static_cast<std::int64_t>(chunk.size());
      std::vector<std::int64_t> labels;
      Tensor<T> x = data::make_batch<T>(ds, chunk, &labels, cfg.augment ? &aug_rng : nullptr,
                                        cfg.augment ? &aug_cfg : nullptr);

      // teacher forward (frozen; detached from the student's tape)
      Tensor<T> z_t, spatial_t;
      if (use_logit || use_attn) {
        if (cached) {
          const std::int64_t C = cache.n_classes, G = cache.grid;
          std::vector<T> zl(static_cast<std::size_t>(B * C));
          std::vector<T> sp(static_cast<std::size_t>(B * G * G));
          for (std::int64_t b = 0; b < B; ++b) {
            const auto& zc = cache.logits.at(chunk[static_cast<std::size_t>(b)]);
            const auto& sc = cache.spatial.at(chunk[static_cast<std::size_t>(b)]);
            std::copy(zc.begin(), zc.end(), zl.begin() + static_cast<std::ptrdiff_t>(b * C));
            std::copy(sc.begin(), sc.end(), sp.begin() + static_cast<std::ptrdiff_t>(b * G * G));
          }
          z_t = Tensor<T>({B, C}, std::move(zl));
          spatial_t = Tensor<T>({B, 1, G, G}, std::move(sp));
        } else {
          NoGradGuard ng;
          auto tout = teacher->forward(x);
          z_t = tout.logits.detach();
          if (use_attn) spatial_t = teacher_attention_to_spatial(tout.attention).detach();
        }
      }

      auto sout = student.forward(x);
      Tensor<T> l_ce = cross_entropy(sout.logits, labels);
      std::optional<Tensor<T>> l_logit, l_attn;
      if (use_logit) l_logit = loss_logit(z_t, sout.logits, tau);
      if (use_attn) {
        auto aligned = align(spatial_t, sout.features, adapters);
        l_attn = loss_attn(aligned.p_teacher, aligned.p_student);
      }
      Tensor<T> total = loss_total(l_ce, l_logit, l_attn, alpha, beta);

      const double lv = static_cast<double>(total.item());
      if (!std::isfinite(lv))
        throw TrainError("distillation loss diverged (non-finite) at epoch " +
                         std::to_string(epoch));
      opt.zero_grad();
      total.backward();
      opt.step();

      sum_total += lv;
      sum_ce += static_cast<double>(l_ce.item());
      if (l_logit) sum_logit += static_cast<double>(l_logit->item());
      if (l_attn) sum_attn += static_cast<double>(l_attn->item());
      ++batches;
    }

    auto val = evaluate_model(student, ds, ds.val_idx, cfg.batch_size);
    EpochRow row;
    row.epoch = epoch;
    row.loss_total = sum_total / static_cast<double>(batches);
    row.loss_ce = sum_ce / static_cast<double>(batches);
    row.loss_logit = sum_logit / static_cast<double>(batches);
    row.loss_attn = sum_attn / static_cast<double>(batches);
    row.val_acc = val.accuracy;
    row.val_f1 = val.f1_macro;
    report.epochs.push_back(row);

    if (val.accuracy > report.best_val_acc || best.empty()) {
      report.best_val_acc = val.accuracy;
      report.best_epoch = epoch;
      best = detail_train::snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  detail_train::restore(params, best);
  if (adapters_out) *adapters_out = adapters;
  return report;
}

// Student-only baseline: the same loop with both distillation terms off.
template <typename T = float>
TrainReport run_student_baseline(StudentModel<T>& student, const data::Dataset& ds,
                                 const DistillConfig& cfg) {
  DistillConfig base = cfg;
  base.alpha = 0;
  base.beta = 0;
  base.cache_teacher = false;
  return run_distillation<T>(nullptr, student, ds, base);
}

// Table-VI-style temperature sweep: one distillation run per tau with a
// fixed seed, reporting test accuracy, F1, AUC and mAP per row.
template <typename T = float>
SweepReport temperature_sweep(const std::vector<double>& taus, const TeacherModel<T>& teacher,
                              const data::Dataset& ds, const DistillConfig& cfg) {
  if (taus.empty()) throw ConfigError("temperature sweep needs at least one tau");
  for (double t : taus)
    if (!(t >= 1e-6)) throw ConfigError("sweep tau must be >= 1e-6");
  SweepReport report;
  for (double tau : taus) {
    DistillConfig run_cfg = cfg;
    run_cfg.tau = tau;
    StudentModel<T> student(StudentConfig{ds.n_classes, ds.image_size},
                            Rng::child(cfg.seed, "student"));
    run_distillation(&teacher, student, ds, run_cfg);
    auto test = evaluate_model(student, ds, ds.test_idx, cfg.batch_size);
    report.rows.push_back({tau, test.accuracy, test.f1_macro, test.auc_macro, test.map_macro});
  }
  return report;
}

}  // namespace kd
