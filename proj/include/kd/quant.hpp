#pragma once

#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "kd/data.hpp"
#include "kd/models.hpp"

namespace kd {

// ---------------------------------------------------------------------------
// parameter / FLOP accounting

struct CostReport {
  std::int64_t params = 0;
  std::int64_t flops = 0;  // multiply-accumulates counted as 2 ops, per image
};

namespace detail_cost {

inline std::int64_t conv_flops(std::int64_t kh, std::int64_t kw, std::int64_t c_in,
                               std::int64_t c_out, std::int64_t groups, std::int64_t h_out,
                               std::int64_t w_out) {
  return 2 * kh * kw * (c_in / groups) * c_out * h_out * w_out;
}

inline std::int64_t linear_flops(std::int64_t in, std::int64_t out) { return 2 * in * out; }

template <typename P>
std::int64_t param_count(const P& named) {
  std::int64_t n = 0;
  for (const auto& [name, t] : named) n += t.numel();
  return n;
}

}  // namespace detail_cost

inline CostReport teacher_cost(const TeacherConfig& cfg) {
  using detail_cost::linear_flops;
  const std::int64_t grid = cfg.image_size / cfg.patch;
  const std::int64_t np = grid * grid;
  const std::int64_t pd = 3 * cfg.patch * cfg.patch;

  CostReport r;
  // patch embedding: one linear per patch
  r.flops += np * linear_flops(pd, cfg.dim);
  for (std::int64_t b = 0; b < cfg.n_blocks; ++b) {
    // q, k, v, output projections over all tokens
    r.flops += 4 * np * linear_flops(cfg.dim, cfg.dim);
    // attention scores QK^T and weighted values AV, summed over heads
    r.flops += 2 * (2 * np * np * cfg.dim);
    // MLP
    r.flops += np * (linear_flops(cfg.dim, cfg.mlp_hidden) + linear_flops(cfg.mlp_hidden, cfg.dim));
  }
  // classifier head on the pooled token
  r.flops += linear_flops(cfg.dim, cfg.dim) + linear_flops(cfg.dim, cfg.n_classes);

  TeacherModel<float> model(cfg, Rng::child(0, "cost/teacher"));
  r.params = detail_cost::param_count(model.named_parameters());
  return r;
}

inline CostReport student_cost(const StudentConfig& cfg) {
  using detail_cost::conv_flops;
  using detail_cost::linear_flops;
  CostReport r;
  std::int64_t s = cfg.image_size / 2;  // stem stride 2
  r.flops += conv_flops(3, 3, 3, cfg.stem_channels, 1, s, s);
  std::int64_t c = cfg.stem_channels;
  for (std::size_t i = 0; i < cfg.block_channels.size(); ++i) {
    const std::int64_t c_out = cfg.block_channels[i];
    const std::int64_t stride = cfg.block_strides[i];
    s /= stride;
    // depthwise 3x3 (groups = c), then SE gate, then pointwise 1x1
    r.flops += conv_flops(3, 3, c, c, c, s, s);
    const std::int64_t hidden = c / cfg.se_reduction;
    r.flops += linear_flops(c, hidden) + linear_flops(hidden, c);
    r.flops += conv_flops(1, 1, c, c_out, 1, s, s);
    c = c_out;
  }
  r.flops += linear_flops(c, cfg.n_classes);

  StudentModel<float> model(cfg, Rng::child(0, "cost/student"));
  r.params = detail_cost::param_count(model.named_parameters());
  return r;
}

// ---------------------------------------------------------------------------
// int8 quantization

struct QuantTensor {
  std::string name;
  Shape shape;
  std::vector<std::int8_t> q;
  float scale = 1.0f;  // symmetric per-tensor, zero point fixed at 0
};

template <typename T>
struct QuantizedStudent {
  StudentConfig config;
  std::vector<QuantTensor> weights;
  typename StudentModel<T>::ActQuant act{};
};

inline constexpr float kMinQuantScale = 1e-8f;

inline QuantTensor quantize_tensor(const std::string& name, const Shape& shape,
                                   const std::vector<float>& w) {
  QuantTensor qt;
  qt.name = name;
  qt.shape = shape;
  float amax = 0;
  for (float v : w) amax = std::max(amax, std::abs(v));
  qt.scale = std::max(amax / 127.0f, kMinQuantScale);
  qt.q.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    float q = std::round(w[i] / qt.scale);
    qt.q[i] = static_cast<std::int8_t>(std::min(std::max(q, -127.0f), 127.0f));
  }
  return qt;
}

// Post-training quantization: symmetric per-tensor int8 weights plus
// activation ranges observed on a calibration set (at least 32 images).
template <typename T = float>
QuantizedStudent<T> quantize_model(const StudentModel<T>& model, const data::Dataset& ds,
                                   const std::vector<std::int64_t>& calib_indices,
                                   std::int64_t batch_size = 32) {
  if (static_cast<std::int64_t>(calib_indices.size()) < 32)
    throw ConfigError("quantize_model: calibration set must hold at least 32 images, got " +
                      std::to_string(calib_indices.size()));
  QuantizedStudent<T> qs;
  qs.config = model.config();
  for (const auto& [name, t] : model.named_parameters()) {
    std::vector<float> w(t.data().size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(t.data()[i]);
    qs.weights.push_back(quantize_tensor(name, t.shape(), w));
  }
  qs.act.lo.fill(std::numeric_limits<float>::max());
  qs.act.hi.fill(std::numeric_limits<float>::lowest());
  NoGradGuard ng;
  for (std::size_t start = 0; start < calib_indices.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(calib_indices.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::int64_t> chunk(calib_indices.begin() + static_cast<std::ptrdiff_t>(start),
                                    calib_indices.begin() + static_cast<std::ptrdiff_t>(stop));
    model.calibrate(data::make_batch<T>(ds, chunk), qs.act);
  }
  return qs;
}

// Materialize a float model carrying the dequantized weights; inference with
// the returned ActQuant replays the int8 activation grid.
template <typename T = float>
StudentModel<T> dequantize_model(const QuantizedStudent<T>& qs) {
  StudentModel<T> model(qs.config, Rng::child(0, "dequantize"));
  auto params = model.named_parameters();
  if (params.size() != qs.weights.size())
    throw FormatError("dequantize_model: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& qt = qs.weights[i];
    if (qt.name != name || qt.shape != t.shape())
      throw FormatError("dequantize_model: tensor " + qt.name + " does not match model layout");
    for (std::size_t j = 0; j < qt.q.size(); ++j)
      t.data()[j] = static_cast<T>(static_cast<float>(qt.q[j]) * qt.scale);
  }
  return model;
}

// ---------------------------------------------------------------------------
// checkpoint format (KDF1)
//
//   "KDF1" | u32 version | u32 descriptor length | descriptor (UTF-8)
//   u32 tensor count, then per tensor:
//     u32 name length | name | u8 dtype (0 = f32, 1 = i8) | u8 ndim
//     i64 dims[ndim] | f32 scale | i32 zero_point | payload (little-endian)

struct CheckpointTensor {
  std::string name;
  std::uint8_t dtype = 0;  // 0 = f32, 1 = i8
  Shape dims;
  float scale = 1.0f;
  std::int32_t zero_point = 0;
  std::vector<std::uint8_t> payload;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::string descriptor;
  std::vector<CheckpointTensor> tensors;
};

namespace detail_ckpt {

template <typename V>
void put(std::vector<std::uint8_t>& out, V v) {
  static_assert(std::is_trivially_copyable_v<V>);
  std::uint8_t b[sizeof(V)];
  std::memcpy(b, &v, sizeof(V));
  out.insert(out.end(), b, b + sizeof(V));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  template <typename V>
  V get() {
    if (pos + sizeof(V) > buf.size()) throw FormatError("checkpoint truncated");
    V v;
    std::memcpy(&v, buf.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
  }

  std::string get_string(std::size_t n) {
    if (pos + n > buf.size()) throw FormatError("checkpoint truncated");
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }

  std::vector<std::uint8_t> get_bytes(std::size_t n) {
    if (pos + n > buf.size()) throw FormatError("checkpoint truncated");
    std::vector<std::uint8_t> v(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return v;
  }
};

}  // namespace detail_ckpt

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  using detail_ckpt::put;
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'K', 'D', 'F', '1'});
  put(out, ckpt.version);
  put(out, static_cast<std::uint32_t>(ckpt.descriptor.size()));
  out.insert(out.end(), ckpt.descriptor.begin(), ckpt.descriptor.end());
  put(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put(out, t.dtype);
    put(out, static_cast<std::uint8_t>(t.dims.size()));
    std::int64_t n = 1;
    for (auto d : t.dims) {
      put(out, d);
      n *= d;
    }
    put(out, t.scale);
    put(out, t.zero_point);
    const std::size_t expect = static_cast<std::size_t>(n) * (t.dtype == 0 ? 4 : 1);
    if (t.payload.size() != expect)
      throw FormatError("checkpoint tensor " + t.name + " payload size mismatch");
    out.insert(out.end(), t.payload.begin(), t.payload.end());
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& buf) {
  detail_ckpt::Reader r{buf};
  if (r.get_string(4) != "KDF1") throw FormatError("bad checkpoint magic (expected KDF1)");
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != 1)
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.descriptor = r.get_string(r.get<std::uint32_t>());
  const std::uint32_t count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.get_string(r.get<std::uint32_t>());
    t.dtype = r.get<std::uint8_t>();
    if (t.dtype > 1) throw FormatError("unknown dtype tag in tensor " + t.name);
    const std::uint8_t nd = r.get<std::uint8_t>();
    std::int64_t n = 1;
    for (std::uint8_t d = 0; d < nd; ++d) {
      t.dims.push_back(r.get<std::int64_t>());
      if (t.dims.back() < 0) throw FormatError("negative dimension in tensor " + t.name);
      n *= t.dims.back();
    }
    t.scale = r.get<float>();
    t.zero_point = r.get<std::int32_t>();
    t.payload = r.get_bytes(static_cast<std::size_t>(n) * (t.dtype == 0 ? 4 : 1));
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.pos != buf.size()) throw FormatError("trailing bytes after checkpoint payload");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot read " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(buf.data()), n);
  if (!f) throw DataError("short read from " + path);
  return deserialize_checkpoint(buf);
}

// ---------------------------------------------------------------------------
// model <-> checkpoint converters

namespace detail_ckpt {

inline std::string student_descriptor(const StudentConfig& c, const char* kind) {
  std::string d = "{\"model\":\"student\",\"kind\":\"";
  d += kind;
  d += "\",\"n_classes\":" + std::to_string(c.n_classes);
  d += ",\"image_size\":" + std::to_string(c.image_size);
  d += ",\"stem_channels\":" + std::to_string(c.stem_channels);
  d += ",\"block_channels\":[" + std::to_string(c.block_channels[0]) + "," +
       std::to_string(c.block_channels[1]) + "," + std::to_string(c.block_channels[2]) + "]";
  d += ",\"block_strides\":[" + std::to_string(c.block_strides[0]) + "," +
       std::to_string(c.block_strides[1]) + "," + std::to_string(c.block_strides[2]) + "]";
  d += ",\"se_reduction\":" + std::to_string(c.se_reduction) + "}";
  return d;
}

}  // namespace detail_ckpt

template <typename T>
Checkpoint checkpoint_from_params(const NamedParams<T>& params, const std::string& descriptor) {
  Checkpoint ckpt;
  ckpt.descriptor = descriptor;
  for (const auto& [name, t] : params) {
    CheckpointTensor ct;
    ct.name = name;
    ct.dtype = 0;
    ct.dims = t.shape();
    ct.payload.resize(t.data().size() * 4);
    for (std::size_t i = 0; i < t.data().size(); ++i) {
      const float v = static_cast<float>(t.data()[i]);
      std::memcpy(ct.payload.data() + i * 4, &v, 4);
    }
    ckpt.tensors.push_back(std::move(ct));
  }
  return ckpt;
}

template <typename T>
void load_params_from_checkpoint(const Checkpoint& ckpt, const NamedParams<T>& params) {
  if (ckpt.tensors.size() != params.size())
    throw FormatError("checkpoint tensor count does not match model layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const auto& ct = ckpt.tensors[i];
    if (ct.name != name || ct.dims != t.shape() || ct.dtype != 0)
      throw FormatError("checkpoint tensor " + ct.name + " does not match model layout");
    for (std::size_t j = 0; j < t.data().size(); ++j) {
      float v;
      std::memcpy(&v, ct.payload.data() + j * 4, 4);
      t.data()[j] = static_cast<T>(v);
    }
  }
}

template <typename T>
Checkpoint checkpoint_from_student(const StudentModel<T>& model) {
  return checkpoint_from_params(model.named_parameters(),
                                detail_ckpt::student_descriptor(model.config(), "float32"));
}

template <typename T>
void load_student_from_checkpoint(const Checkpoint& ckpt, StudentModel<T>& model) {
  load_params_from_checkpoint(ckpt, model.named_parameters());
}

template <typename T>
Checkpoint checkpoint_from_quantized(const QuantizedStudent<T>& qs) {
  Checkpoint ckpt;
  ckpt.descriptor = detail_ckpt::student_descriptor(qs.config, "int8");
  for (const auto& qt : qs.weights) {
    CheckpointTensor ct;
    ct.name = qt.name;
    ct.dtype = 1;
    ct.dims = qt.shape;
    ct.scale = qt.scale;
    ct.zero_point = 0;
    ct.payload.resize(qt.q.size());
    std::memcpy(ct.payload.data(), qt.q.data(), qt.q.size());
    ckpt.tensors.push_back(std::move(ct));
  }
  CheckpointTensor act;
  act.name = "__act_ranges__";
  act.dtype = 0;
  act.dims = {2, StudentModel<T>::kActObservers};
  act.payload.resize(2 * StudentModel<T>::kActObservers * 4);
  for (int i = 0; i < StudentModel<T>::kActObservers; ++i) {
    std::memcpy(act.payload.data() + i * 4, &qs.act.lo[static_cast<std::size_t>(i)], 4);
    std::memcpy(act.payload.data() + (StudentModel<T>::kActObservers + i) * 4,
                &qs.act.hi[static_cast<std::size_t>(i)], 4);
  }
  ckpt.tensors.push_back(std::move(act));
  return ckpt;
}

template <typename T = float>
QuantizedStudent<T> quantized_from_checkpoint(const Checkpoint& ckpt, const StudentConfig& cfg) {
  QuantizedStudent<T> qs;
  qs.config = cfg;
  for (const auto& ct : ckpt.tensors) {
    if (ct.name == "__act_ranges__") {
      if (ct.dtype != 0 || ct.dims != Shape{2, StudentModel<T>::kActObservers})
        throw FormatError("malformed activation range tensor");
      for (int i = 0; i < StudentModel<T>::kActObservers; ++i) {
        std::memcpy(&qs.act.lo[static_cast<std::size_t>(i)], ct.payload.data() + i * 4, 4);
        std::memcpy(&qs.act.hi[static_cast<std::size_t>(i)],
                    ct.payload.data() + (StudentModel<T>::kActObservers + i) * 4, 4);
      }
      continue;
    }
    if (ct.dtype != 1) throw FormatError("expected int8 weights in quantized checkpoint");
    QuantTensor qt;
    qt.name = ct.name;
    qt.shape = ct.dims;
    qt.scale = ct.scale;
    qt.q.resize(ct.payload.size());
    std::memcpy(qt.q.data(), ct.payload.data(), ct.payload.size());
    qs.weights.push_back(std::move(qt));
  }
  return qs;
}

// ---------------------------------------------------------------------------
// benchmark harness

struct BenchReport {
  std::string model;
  double params_m = 0;
  double flops_g = 0;
  double size_mb = 0;
  double lat_ms_mean = 0;
  double lat_ms_std = 0;
  double mem_mb = 0;
};

inline void write_bench_report_csv(const std::vector<BenchReport>& rows,
                                   const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << "model,params_m,flops_g,size_mb,lat_ms_mean,lat_ms_std,mem_mb\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.model.c_str(),
                  r.params_m, r.flops_g, r.size_mb, r.lat_ms_mean, r.lat_ms_std, r.mem_mb);
    f << buf;
  }
}

// Single-image latency over `runs` timed forwards after `warmup` untimed
// ones; memory is the peak tensor-allocation delta across the timed runs.
template <typename Forward>
BenchReport benchmark_forward(const std::string& name, const CostReport& cost,
                              std::int64_t size_bytes, std::int64_t image_size, Forward&& fwd,
                              int runs = 30, int warmup = 5) {
  if (runs < 1 || warmup < 0) throw ConfigError("benchmark needs runs >= 1 and warmup >= 0");
  NoGradGuard ng;
  Rng rng = Rng::child(0, "bench/input");
  Tensor<float> x = Tensor<float>::uniform({1, 3, image_size, image_size}, rng, 0.0f, 1.0f);

  for (int i = 0; i < warmup; ++i) fwd(x);

  const std::int64_t mem_before = MemTracker::current().load();
  MemTracker::reset_peak();
  std::vector<double> lat(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fwd(x);
    const auto t1 = std::chrono::steady_clock::now();
    lat[static_cast<std::size_t>(i)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  const std::int64_t mem_peak = MemTracker::peak().load();

  double mean = 0;
  for (double v : lat) mean += v;
  mean /= static_cast<double>(runs);
  double var = 0;
  for (double v : lat) var += (v - mean) * (v - mean);
  var /= static_cast<double>(runs);

  BenchReport r;
  r.model = name;
  r.params_m = static_cast<double>(cost.params) / 1e6;
  r.flops_g = static_cast<double>(cost.flops) / 1e9;
  r.size_mb = static_cast<double>(size_bytes) / (1024.0 * 1024.0);
  r.lat_ms_mean = mean;
  r.lat_ms_std = std::sqrt(var);
  r.mem_mb = static_cast<double>(std::max<std::int64_t>(mem_peak - mem_before, 0)) /
             (1024.0 * 1024.0);
  return r;
}

}  // namespace kd
