#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kd/distill.hpp"
#include "kd/gradcheck.hpp"

using namespace kd;

namespace {

data::Dataset tiny_dataset(std::int64_t per_class = 15, std::int64_t size = 16) {
  data::SyntheticSpec spec;
  spec.n_classes = 2;
  spec.images_per_class = per_class;
  spec.image_size = size;
  spec.tier = data::Tier::Easy;
  return data::generate(spec);
}

DistillConfig tiny_config() {
  DistillConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.early_stop_patience = 8;
  cfg.c_common = 4;
  cfg.augment = false;
  return cfg;
}

TeacherConfig tiny_teacher_config() { return {2, 16, 4, 8, 2, 1, 16}; }

StudentConfig tiny_student_config() { return {2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2}; }

}  // namespace

TEST_CASE("teacher attention pooling matches a direct loop") {
  Rng rng(3);
  Tensor<float> logits = Tensor<float>::randn({2, 3, 9, 9}, rng);
  Tensor<float> attn = softmax(logits, 3);
  auto spatial = teacher_attention_to_spatial(attn);
  REQUIRE(spatial.shape() == Shape{2, 1, 3, 3});

  for (std::int64_t b = 0; b < 2; ++b) {
    double total = 0;
    for (std::int64_t j = 0; j < 9; ++j) {
      double acc = 0;
      for (std::int64_t h = 0; h < 3; ++h)
        for (std::int64_t i = 0; i < 9; ++i)
          acc += attn.data()[static_cast<std::size_t>(((b * 3 + h) * 9 + i) * 9 + j)];
      acc /= 27.0;
      REQUIRE(spatial.data()[static_cast<std::size_t>(b * 9 + j)] ==
              Catch::Approx(acc).margin(1e-6));
      total += acc;
    }
    // attention rows are distributions, so received attention sums to 1
    REQUIRE(total == Catch::Approx(1.0).margin(1e-5));
  }

  Tensor<float> not_square = Tensor<float>::randn({1, 2, 5, 5}, rng);
  REQUIRE_THROWS_AS(teacher_attention_to_spatial(not_square), ConfigError);
  Tensor<float> bad = Tensor<float>::randn({1, 2, 4, 5}, rng);
  REQUIRE_THROWS_AS(teacher_attention_to_spatial(bad), DimError);
}

TEST_CASE("teacher attention pooling passes grad_check") {
  Rng rng(5);
  REQUIRE(grad_check<double>(
              [](const Tensor<double>& t) {
                auto y = teacher_attention_to_spatial(t);
                return sum_all(mul(y, y));
              },
              Tensor<double>::randn({1, 2, 4, 4}, rng)) < 1e-5);
}

TEST_CASE("align produces normalized maps and identity under shared adapters") {
  Rng rng(7);
  ChannelAdapters<float> adapters(1, 1, 3, rng);
  // same projection on both branches and no resize step
  adapters.gs_weight.data() = adapters.gt_weight.data();
  adapters.gs_bias.data() = adapters.gt_bias.data();

  Tensor<float> map = Tensor<float>::randn({2, 1, 4, 4}, rng);
  auto aligned = align(map, map, adapters);
  REQUIRE(aligned.p_teacher.shape() == Shape{2, 48});
  for (std::size_t i = 0; i < aligned.p_teacher.data().size(); ++i)
    REQUIRE(aligned.p_teacher.data()[i] ==
            Catch::Approx(aligned.p_student.data()[i]).margin(1e-6));

  for (std::int64_t b = 0; b < 2; ++b) {
    double st = 0, ss = 0;
    for (std::int64_t k = 0; k < 48; ++k) {
      st += aligned.p_teacher.data()[static_cast<std::size_t>(b * 48 + k)];
      ss += aligned.p_student.data()[static_cast<std::size_t>(b * 48 + k)];
    }
    REQUIRE(st == Catch::Approx(1.0).margin(1e-5));
    REQUIRE(ss == Catch::Approx(1.0).margin(1e-5));
  }
}

TEST_CASE("align handles teacher grids smaller and larger than the student") {
  Rng rng(9);
  ChannelAdapters<float> adapters(1, 6, 4, rng);
  Tensor<float> student = Tensor<float>::randn({2, 6, 8, 8}, rng);
  for (std::int64_t g : {2, 8, 16}) {
    Tensor<float> tmap = Tensor<float>::randn({2, 1, g, g}, rng);
    auto aligned = align(tmap, student, adapters);
    REQUIRE(aligned.p_teacher.shape() == Shape{2, 4 * 8 * 8});
    REQUIRE(aligned.p_student.shape() == Shape{2, 4 * 8 * 8});
    REQUIRE(aligned.p_teacher.all_finite());
  }
}

TEST_CASE("logit loss closed form") {
  Tensor<float> z_t({1, 2}, {2.0f, 0.0f});
  Tensor<float> z_s({1, 2}, {0.0f, 0.0f});
  const float tau = 2.0f;
  auto l = loss_logit(z_t, z_s, tau);
  // softened teacher: softmax([1, 0]); student: [0.5, 0.5]
  const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  const double p1 = 1.0 - p0;
  const double kl = p0 * std::log(p0 / 0.5) + p1 * std::log(p1 / 0.5);
  REQUIRE(l.item() == Catch::Approx(tau * tau * kl).margin(1e-6));
}

TEST_CASE("logit loss detaches the teacher and trains the student") {
  Rng rng(11);
  Tensor<float> z_t = Tensor<float>::randn({3, 4}, rng).set_requires_grad(true);
  Tensor<float> z_s = Tensor<float>::randn({3, 4}, rng).set_requires_grad(true);
  auto l = loss_logit(z_t, z_s, 6.0f);
  l.backward();
  REQUIRE(!z_t.has_grad());
  REQUIRE(z_s.has_grad());
  bool any = false;
  for (float g : z_s.grad()) any = any || g != 0.0f;
  REQUIRE(any);
}

TEST_CASE("total loss decomposes into its terms") {
  Tensor<float> ce = Tensor<float>::scalar(1.25f);
  Tensor<float> lg = Tensor<float>::scalar(0.5f);
  Tensor<float> la = Tensor<float>::scalar(0.2f);
  auto total = loss_total<float>(ce, lg, la, 0.7f, 0.3f);
  REQUIRE(total.item() == Catch::Approx(1.25 + 0.7 * 0.5 + 0.3 * 0.2).margin(1e-6));

  // with both weights zero the supervised loss node is returned unchanged
  auto same = loss_total<float>(ce, lg, la, 0.0f, 0.0f);
  REQUIRE(same.node() == ce.node());
}

TEST_CASE("distillation config validation") {
  DistillConfig cfg = tiny_config();
  cfg.tau = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.alpha = -0.1;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.cache_teacher = true;
  cfg.augment = true;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("distillation requires a frozen teacher") {
  auto ds = tiny_dataset();
  TeacherModel<float> teacher(tiny_teacher_config(), Rng(1));
  StudentModel<float> student(tiny_student_config(), Rng(2));
  DistillConfig cfg = tiny_config();
  cfg.epochs = 1;
  REQUIRE_THROWS_AS(run_distillation(&teacher, student, ds, cfg), ConfigError);
  REQUIRE_THROWS_AS(run_distillation<float>(nullptr, student, ds, cfg), ConfigError);
}

TEST_CASE("teacher cache reproduces direct teacher outputs") {
  auto ds = tiny_dataset();
  TeacherModel<float> teacher(tiny_teacher_config(), Rng(3));
  teacher.set_frozen(true);
  auto cache = build_teacher_cache(teacher, ds, ds.train_idx, 8);

  NoGradGuard ng;
  for (auto idx : ds.train_idx) {
    Tensor<float> x = data::make_batch<float>(ds, {idx});
    auto out = teacher.forward(x);
    auto spatial = teacher_attention_to_spatial(out.attention);
    const auto& zc = cache.logits.at(idx);
    const auto& sc = cache.spatial.at(idx);
    for (std::size_t i = 0; i < zc.size(); ++i)
      REQUIRE(zc[i] == Catch::Approx(out.logits.data()[i]).margin(1e-6));
    for (std::size_t i = 0; i < sc.size(); ++i)
      REQUIRE(sc[i] == Catch::Approx(spatial.data()[i]).margin(1e-6));
  }
}

TEST_CASE("alpha and beta zero reduces bit-identically to the supervised baseline") {
  auto ds = tiny_dataset();
  DistillConfig cfg = tiny_config();

  StudentModel<float> a(tiny_student_config(), Rng(5));
  DistillConfig zero = cfg;
  zero.alpha = 0;
  zero.beta = 0;
  auto rep_a = run_distillation<float>(nullptr, a, ds, zero);

  // the baseline helper masks the weights itself
  StudentModel<float> b(tiny_student_config(), Rng(5));
  DistillConfig hybrid_weights = cfg;
  hybrid_weights.alpha = 0.7;
  hybrid_weights.beta = 0.3;
  auto rep_b = run_student_baseline(b, ds, hybrid_weights);

  REQUIRE(params_checksum(a.named_parameters()) == params_checksum(b.named_parameters()));
  REQUIRE(rep_a.epochs.size() == rep_b.epochs.size());
  for (std::size_t i = 0; i < rep_a.epochs.size(); ++i) {
    REQUIRE(rep_a.epochs[i].loss_total == rep_b.epochs[i].loss_total);
    REQUIRE(rep_a.epochs[i].loss_logit == 0.0);
    REQUIRE(rep_a.epochs[i].loss_attn == 0.0);
  }
}

TEST_CASE("hybrid distillation runs, trains adapters and is deterministic") {
  auto ds = tiny_dataset();
  TeacherModel<float> teacher(tiny_teacher_config(), Rng(7));
  teacher.set_frozen(true);
  const std::uint64_t teacher_sum = teacher.checksum();

  auto run = [&](StudentModel<float>& student, ChannelAdapters<float>* adapters) {
    DistillConfig cfg = tiny_config();
    cfg.alpha = 0.7;
    cfg.beta = 0.3;
    return run_distillation(&teacher, student, ds, cfg, adapters);
  };

  StudentModel<float> s1(tiny_student_config(), Rng(8));
  ChannelAdapters<float> ad1;
  auto r1 = run(s1, &ad1);
  REQUIRE(teacher.checksum() == teacher_sum);
  REQUIRE(!r1.epochs.empty());
  for (const auto& e : r1.epochs) {
    REQUIRE(e.loss_logit > 0.0);
    REQUIRE(e.loss_attn >= 0.0);
    REQUIRE(std::isfinite(e.loss_total));
  }

  StudentModel<float> s2(tiny_student_config(), Rng(8));
  ChannelAdapters<float> ad2;
  auto r2 = run(s2, &ad2);
  REQUIRE(params_checksum(s1.named_parameters()) == params_checksum(s2.named_parameters()));
  REQUIRE(ad1.gt_weight.data() == ad2.gt_weight.data());
  REQUIRE(ad1.gs_weight.data() == ad2.gs_weight.data());
}

TEST_CASE("cached-teacher distillation matches the uncached run") {
  auto ds = tiny_dataset();
  TeacherModel<float> teacher(tiny_teacher_config(), Rng(9));
  teacher.set_frozen(true);

  DistillConfig cfg = tiny_config();
  cfg.alpha = 0.7;
  cfg.beta = 0.3;

  StudentModel<float> direct(tiny_student_config(), Rng(10));
  run_distillation(&teacher, direct, ds, cfg);

  cfg.cache_teacher = true;
  StudentModel<float> cached(tiny_student_config(), Rng(10));
  run_distillation(&teacher, cached, ds, cfg);

  const auto pd = direct.named_parameters();
  const auto pc = cached.named_parameters();
  for (std::size_t i = 0; i < pd.size(); ++i)
    for (std::size_t k = 0; k < pd[i].second.data().size(); ++k)
      REQUIRE(pd[i].second.data()[k] ==
              Catch::Approx(pc[i].second.data()[k]).margin(1e-4));
}

TEST_CASE("temperature sweep reports one complete row per tau") {
  auto ds = tiny_dataset();
  TeacherModel<float> teacher(tiny_teacher_config(), Rng(11));
  teacher.set_frozen(true);

  DistillConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.alpha = 0.7;
  cfg.beta = 0.3;
  auto rep = temperature_sweep({1.0, 6.0}, teacher, ds, cfg);
  REQUIRE(rep.rows.size() == 2);
  for (const auto& row : rep.rows) {
    REQUIRE(std::isfinite(row.test_acc));
    REQUIRE(row.test_acc >= 0.0);
    REQUIRE(row.test_acc <= 1.0);
    REQUIRE(row.auc >= 0.0);
    REQUIRE(row.map >= 0.0);
  }
  REQUIRE(rep.rows[0].tau == 1.0);
  REQUIRE(rep.rows[1].tau == 6.0);

  REQUIRE_THROWS_AS(temperature_sweep({}, teacher, ds, cfg), ConfigError);
  REQUIRE_THROWS_AS(temperature_sweep({0.0}, teacher, ds, cfg), ConfigError);
}

TEST_CASE("report csv writers emit the documented layout") {
  namespace fs = std::filesystem;
  TrainReport tr;
  tr.epochs.push_back({1, 1.5, 1.0, 0.5, 0.25, 0.625, 0.5});
  const fs::path tpath = fs::temp_directory_path() / "kd_train_report.csv";
  write_train_report_csv(tr, tpath.string());
  std::ifstream tf(tpath);
  std::stringstream tss;
  tss << tf.rdbuf();
  REQUIRE(tss.str() ==
          "epoch,loss_total,loss_ce,loss_logit,loss_attn,val_acc,val_f1\n"
          "1,1.500000,1.000000,0.500000,0.250000,0.625000,0.500000\n");
  fs::remove(tpath);

  SweepReport sr;
  sr.rows.push_back({6.0, 0.9, 0.89, 0.99, 0.95});
  const fs::path spath = fs::temp_directory_path() / "kd_sweep_report.csv";
  write_sweep_report_csv(sr, spath.string());
  std::ifstream sf(spath);
  std::stringstream sss;
  sss << sf.rdbuf();
  REQUIRE(sss.str() ==
          "tau,test_acc,f1,auc,map\n"
          "6.000000,0.900000,0.890000,0.990000,0.950000\n");
  fs::remove(spath);
}
