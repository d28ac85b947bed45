#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "kd/quant.hpp"

using namespace kd;

TEST_CASE("tensor quantization round-trips within half a step") {
  Rng rng(1);
  Tensor<float> w = Tensor<float>::randn({64}, rng, 0.2f);
  auto qt = quantize_tensor("w", w.shape(), w.data());
  REQUIRE(qt.q.size() == 64);
  float amax = 0;
  for (float v : w.data()) amax = std::max(amax, std::abs(v));
  REQUIRE(qt.scale == Catch::Approx(amax / 127.0f));
  for (std::size_t i = 0; i < qt.q.size(); ++i)
    REQUIRE(std::abs(static_cast<float>(qt.q[i]) * qt.scale - w.data()[i]) <=
            qt.scale * 0.5f + 1e-7f);
}

TEST_CASE("all-zero tensors quantize with the floor scale") {
  std::vector<float> zeros(16, 0.0f);
  auto qt = quantize_tensor("z", {16}, zeros);
  REQUIRE(qt.scale == kMinQuantScale);
  for (auto q : qt.q) REQUIRE(q == 0);
}

TEST_CASE("cost reports match the architecture tallies") {
  const auto t = teacher_cost(TeacherConfig{});
  const auto s = student_cost(StudentConfig{});
  // hand tallies for the default desk-scale configs
  REQUIRE(t.params == 187272);
  REQUIRE(t.flops == 24650752);
  REQUIRE(s.params == 10638);
  REQUIRE(s.flops == 1979968);
  REQUIRE(static_cast<double>(t.flops) / static_cast<double>(s.flops) >= 10.0);

  // params must agree with the live model regardless of config
  StudentConfig sc{4, 32, 8, {8, 16, 16}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(0));
  std::int64_t n = 0;
  for (const auto& [name, p] : model.named_parameters()) n += p.numel();
  REQUIRE(student_cost(sc).params == n);
}

TEST_CASE("model quantization needs a calibration set and preserves accuracy shape") {
  data::SyntheticSpec spec;
  spec.n_classes = 2;
  spec.images_per_class = 30;
  spec.image_size = 16;
  spec.tier = data::Tier::Easy;
  auto ds = data::generate(spec);

  StudentConfig sc{2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(3));

  std::vector<std::int64_t> too_few(ds.train_idx.begin(), ds.train_idx.begin() + 8);
  REQUIRE_THROWS_AS(quantize_model(model, ds, too_few), ConfigError);

  auto qs = quantize_model(model, ds, ds.train_idx);
  REQUIRE(qs.weights.size() == model.named_parameters().size());
  for (int i = 0; i < StudentModel<float>::kActObservers; ++i)
    REQUIRE(qs.act.lo[static_cast<std::size_t>(i)] <= qs.act.hi[static_cast<std::size_t>(i)]);

  // dequantized weights sit within half a quantization step of the originals
  auto deq = dequantize_model(qs);
  const auto orig = model.named_parameters();
  const auto back = deq.named_parameters();
  for (std::size_t i = 0; i < orig.size(); ++i)
    for (std::size_t j = 0; j < orig[i].second.data().size(); ++j)
      REQUIRE(std::abs(orig[i].second.data()[j] - back[i].second.data()[j]) <=
              qs.weights[i].scale * 0.5f + 1e-7f);

  // int8 inference stays finite end to end
  Rng rng(4);
  auto out = deq.forward(Tensor<float>::uniform({2, 3, 16, 16}, rng, 0.0f, 1.0f), &qs.act);
  REQUIRE(out.logits.all_finite());
}

TEST_CASE("float checkpoints round-trip bit-exactly") {
  StudentConfig sc{2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(5));
  auto ckpt = checkpoint_from_student(model);
  const auto bytes = serialize_checkpoint(ckpt);
  auto back = deserialize_checkpoint(bytes);
  REQUIRE(serialize_checkpoint(back) == bytes);
  REQUIRE(back.descriptor == ckpt.descriptor);

  StudentModel<float> other(sc, Rng(6));
  REQUIRE(params_checksum(other.named_parameters()) !=
          params_checksum(model.named_parameters()));
  load_student_from_checkpoint(back, other);
  REQUIRE(params_checksum(other.named_parameters()) ==
          params_checksum(model.named_parameters()));
}

TEST_CASE("checkpoint files survive a disk round-trip") {
  namespace fs = std::filesystem;
  StudentConfig sc{2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(7));
  const fs::path path = fs::temp_directory_path() / "kd_test_ckpt.kdf1";
  save_checkpoint(checkpoint_from_student(model), path.string());
  auto loaded = load_checkpoint(path.string());
  StudentModel<float> other(sc, Rng(8));
  load_student_from_checkpoint(loaded, other);
  REQUIRE(params_checksum(other.named_parameters()) ==
          params_checksum(model.named_parameters()));
  fs::remove(path);
}

TEST_CASE("quantized checkpoints carry weights and activation ranges") {
  data::SyntheticSpec spec;
  spec.n_classes = 2;
  spec.images_per_class = 25;
  spec.image_size = 16;
  auto ds = data::generate(spec);

  StudentConfig sc{2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(9));
  auto qs = quantize_model(model, ds, ds.train_idx);

  auto ckpt = checkpoint_from_quantized(qs);
  auto back = quantized_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(ckpt)), sc);
  REQUIRE(back.weights.size() == qs.weights.size());
  for (std::size_t i = 0; i < qs.weights.size(); ++i) {
    REQUIRE(back.weights[i].name == qs.weights[i].name);
    REQUIRE(back.weights[i].q == qs.weights[i].q);
    REQUIRE(back.weights[i].scale == qs.weights[i].scale);
  }
  REQUIRE(back.act.lo == qs.act.lo);
  REQUIRE(back.act.hi == qs.act.hi);

  // int8 payloads shrink the serialized size well below the float checkpoint
  // at the default model size, where tensor payloads dominate the headers
  StudentModel<float> full(StudentConfig{}, Rng(21));
  QuantizedStudent<float> full_q;
  full_q.config = full.config();
  for (const auto& [name, t] : full.named_parameters())
    full_q.weights.push_back(quantize_tensor(name, t.shape(), t.data()));
  const auto float_bytes = serialize_checkpoint(checkpoint_from_student(full)).size();
  const auto int8_bytes = serialize_checkpoint(checkpoint_from_quantized(full_q)).size();
  REQUIRE(static_cast<double>(int8_bytes) < 0.35 * static_cast<double>(float_bytes));
}

TEST_CASE("malformed checkpoints are rejected") {
  StudentConfig sc{2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(11));
  auto bytes = serialize_checkpoint(checkpoint_from_student(model));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  REQUIRE_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);

  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  REQUIRE_THROWS_AS(deserialize_checkpoint(truncated), FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  REQUIRE_THROWS_AS(deserialize_checkpoint(trailing), FormatError);

  auto empty = std::vector<std::uint8_t>{'K', 'D'};
  REQUIRE_THROWS_AS(deserialize_checkpoint(empty), FormatError);
}

TEST_CASE("mismatched checkpoints refuse to load") {
  StudentConfig sc{2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(13));
  auto ckpt = checkpoint_from_student(model);
  ckpt.tensors.pop_back();
  StudentModel<float> target(sc, Rng(14));
  REQUIRE_THROWS_AS(load_student_from_checkpoint(ckpt, target), FormatError);
}

TEST_CASE("benchmark harness reports finite positive latency") {
  StudentConfig sc{2, 16, 4, {4, 8, 8}, {2, 2, 1}, 2};
  StudentModel<float> model(sc, Rng(15));
  auto cost = student_cost(sc);
  auto rep = benchmark_forward(
      "student", cost, 1000, 16, [&](const Tensor<float>& x) { return model.forward(x); }, 3, 1);
  REQUIRE(rep.model == "student");
  REQUIRE(rep.lat_ms_mean > 0.0);
  REQUIRE(std::isfinite(rep.lat_ms_std));
  REQUIRE(rep.size_mb == Catch::Approx(1000.0 / (1024.0 * 1024.0)));
  REQUIRE_THROWS_AS(benchmark_forward("x", cost, 0, 16,
                                      [&](const Tensor<float>& x) { return model.forward(x); },
                                      0, 0),
                    ConfigError);
}
