#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "kd/errors.hpp"
#include "kd/rng.hpp"

namespace kd {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Peak-allocation bookkeeping for tensor buffers (used by the benchmark
// harness to report memory as peak allocation delta).
struct MemTracker {
  static std::atomic<std::int64_t>& current() {
    static std::atomic<std::int64_t> v{0};
    return v;
  }
  static std::atomic<std::int64_t>& peak() {
    static std::atomic<std::int64_t> v{0};
    return v;
  }
  static void add(std::int64_t bytes) {
    const std::int64_t c = current().fetch_add(bytes) + bytes;
    std::int64_t p = peak().load();
    while (c > p && !peak().compare_exchange_weak(p, c)) {
    }
  }
  static void sub(std::int64_t bytes) { current().fetch_sub(bytes); }
  static void reset_peak() { peak().store(current().load()); }
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }

 private:
  bool prev_;
};

// Dense n-dimensional tensor on a dynamic (define-by-run) autodiff tape.
// A Tensor is a cheap handle onto a shared node; ops build new nodes that
// reference their inputs, and backward() replays the tape in reverse
// topological order, then frees the recorded graph.
template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backward_fn;  // scatters node.grad into parents

    Node(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
      MemTracker::add(static_cast<std::int64_t>(data.capacity() * sizeof(T)));
    }
    ~Node() {
      MemTracker::sub(static_cast<std::int64_t>((data.capacity() + grad.capacity()) * sizeof(T)));
    }
    void ensure_grad() {
      if (grad.empty()) {
        grad.assign(data.size(), T(0));
        MemTracker::add(static_cast<std::int64_t>(grad.capacity() * sizeof(T)));
      }
    }
  };

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw DimError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
    n_ = std::make_shared<Node>(std::move(shape), std::move(data));
  }

  static Tensor zeros(const Shape& s) { return full(s, T(0)); }
  static Tensor ones(const Shape& s) { return full(s, T(1)); }
  static Tensor full(const Shape& s, T v) {
    return Tensor(s, std::vector<T>(static_cast<std::size_t>(numel_of(s)), v));
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor randn(const Shape& s, Rng& rng, T stddev = T(1)) {
    std::vector<T> d(static_cast<std::size_t>(numel_of(s)));
    for (auto& x : d) x = static_cast<T>(rng.normal()) * stddev;
    return Tensor(s, std::move(d));
  }
  static Tensor uniform(const Shape& s, Rng& rng, T lo, T hi) {
    std::vector<T> d(static_cast<std::size_t>(numel_of(s)));
    for (auto& x : d) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor(s, std::move(d));
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::int64_t dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(n_->data.size()); }

  // A Tensor is a shared handle onto its node; handle constness does not
  // propagate to the stored values, mirroring shared_ptr semantics.
  std::vector<T>& data() const { return n_->data; }
  std::vector<T>& grad() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }

  T item() const {
    if (numel() != 1) throw DimError("item() on tensor of shape " + shape_str(shape()));
    return n_->data[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  const Tensor& set_requires_grad(bool v = true) const {
    n_->requires_grad = v;
    return *this;
  }

  void zero_grad() const {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // A new leaf sharing nothing with the tape; same values.
  Tensor detach() const { return Tensor(n_->shape, n_->data); }

  Tensor clone() const {
    Tensor c(n_->shape, n_->data);
    c.n_->requires_grad = n_->requires_grad;
    return c;
  }

  Node* node() const { return n_.get(); }

  // Build a non-leaf result node. requires_grad propagates from parents
  // only while grad mode is on; with grad mode off no tape is recorded.
  static Tensor make_op(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                        std::function<void(Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(data));
    bool need = false;
    if (grad_enabled()) {
      for (const auto& p : parents)
        if (p.requires_grad()) need = true;
    }
    if (need) {
      out.n_->requires_grad = true;
      out.n_->is_leaf = false;
      out.n_->parents = std::move(parents);
      out.n_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

  // Reverse-mode sweep from this (scalar) tensor. Frees the tape afterwards:
  // interior nodes drop their parent references and closures, leaves keep
  // their accumulated grads for the optimizer.
  void backward() {
    if (numel() != 1) throw DimError("backward() requires a scalar tensor");
    if (!n_->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx].node();
        ++idx;
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    for (Node* node : order) node->ensure_grad();
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward_fn) node->backward_fn(*node);
    }
    // clear the tape
    for (Node* node : order) {
      if (!node->is_leaf) {
        node->backward_fn = nullptr;
        node->parents.clear();
      }
    }
  }

  bool all_finite() const {
    for (T v : n_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool grad_all_finite() const {
    for (T v : n_->grad)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::shared_ptr<Node> n_;
};

// ---------------------------------------------------------------------------
// elementwise ops

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " must match");
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [a, b](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      detail::accumulate(a.grad(), node.grad);
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      detail::accumulate(b.grad(), node.grad);
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [a, b](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      detail::accumulate(a.grad(), node.grad);
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) b.grad()[i] -= node.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [a, b](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) a.grad()[i] += node.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) b.grad()[i] += node.grad[i] * a.data()[i];
    }
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return Tensor<T>::make_op(a.shape(), std::move(out), {a}, [a, s](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) a.grad()[i] += node.grad[i] * s;
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  return Tensor<T>::make_op(a.shape(), std::move(out), {a}, [a](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      detail::accumulate(a.grad(), node.grad);
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  return Tensor<T>::make_op(a.shape(), std::move(out), {a}, [a](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        if (a.data()[i] > T(0)) a.grad()[i] += node.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-a.data()[i]));
  Tensor<T> result = Tensor<T>::make_op(a.shape(), std::move(out), {a}, nullptr);
  if (result.requires_grad()) {
    const std::vector<T> y = result.data();
    result.node()->backward_fn = [a, y](auto& node) mutable {
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i)
          a.grad()[i] += node.grad[i] * y[i] * (T(1) - y[i]);
      }
    };
  }
  return result;
}

// x * relu6(x + 3) / 6
template <typename T>
Tensor<T> hardswish(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.data()[i];
    const T r = std::min(std::max(x + T(3), T(0)), T(6));
    out[i] = x * r / T(6);
  }
  return Tensor<T>::make_op(a.shape(), std::move(out), {a}, [a](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        const T x = a.data()[i];
        T d;
        if (x <= T(-3))
          d = T(0);
        else if (x >= T(3))
          d = T(1);
        else
          d = (T(2) * x + T(3)) / T(6);
        a.grad()[i] += node.grad[i] * d;
      }
    }
  });
}

// log with a floor on the argument, so downstream KL/CE never see -inf
template <typename T>
Tensor<T> log_floored(const Tensor<T>& a, T eps) {
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(a.data()[i], eps));
  return Tensor<T>::make_op(a.shape(), std::move(out), {a}, [a, eps](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        if (a.data()[i] > eps) a.grad()[i] += node.grad[i] / a.data()[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  return Tensor<T>::make_op(Shape{}, {s}, {a}, [a](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      const T g = node.grad[0];
      for (auto& v : a.grad()) v += g;
    }
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
  // one -1 wildcard allowed
  std::int64_t known = 1;
  int wild = -1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == -1) {
      if (wild >= 0) throw DimError("reshape: more than one -1 in " + shape_str(s));
      wild = static_cast<int>(i);
    } else {
      known *= s[i];
    }
  }
  if (wild >= 0) s[static_cast<std::size_t>(wild)] = a.numel() / known;
  if (numel_of(s) != a.numel())
    throw DimError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  std::vector<T> out = a.data();
  return Tensor<T>::make_op(std::move(s), std::move(out), {a}, [a](auto& node) mutable {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      detail::accumulate(a.grad(), node.grad);
    }
  });
}

namespace detail {

inline std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i + 1)] * s[static_cast<std::size_t>(i + 1)];
  return st;
}

// For each flat output index, the source flat index under the permutation.
inline std::vector<std::int64_t> permute_index_map(const Shape& in_shape,
                                                   const std::vector<int>& dims) {
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i)
    out_shape[i] = in_shape[static_cast<std::size_t>(dims[i])];
  const auto out_strides = strides_of(out_shape);
  const std::int64_t n = numel_of(in_shape);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  for (std::int64_t o = 0; o < n; ++o) {
    std::int64_t rem = o, src = 0;
    for (std::size_t d = 0; d < dims.size(); ++d) {
      const std::int64_t coord = rem / out_strides[d];
      rem %= out_strides[d];
      src += coord * in_strides[static_cast<std::size_t>(dims[d])];
    }
    map[static_cast<std::size_t>(o)] = src;
  }
  return map;
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& dims) {
  if (static_cast<int>(dims.size()) != a.ndim())
    throw DimError("permute: dims rank mismatch for " + shape_str(a.shape()));
  Shape out_shape(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i)
    out_shape[i] = a.shape()[static_cast<std::size_t>(dims[i])];
  auto map = detail::permute_index_map(a.shape(), dims);
  std::vector<T> out(a.data().size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = a.data()[static_cast<std::size_t>(map[o])];
  auto shared_map = std::make_shared<std::vector<std::int64_t>>(std::move(map));
  return Tensor<T>::make_op(std::move(out_shape), std::move(out), {a},
                            [a, shared_map](auto& node) mutable {
                              if (a.requires_grad()) {
                                a.node()->ensure_grad();
                                for (std::size_t o = 0; o < node.grad.size(); ++o)
                                  a.grad()[static_cast<std::size_t>((*shared_map)[o])] +=
                                      node.grad[o];
                              }
                            });
}

}  // namespace kd
