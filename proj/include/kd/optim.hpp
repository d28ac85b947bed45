#pragma once

#include <vector>

#include "kd/tensor.hpp"

namespace kd {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay Adam over a flat parameter list.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Tensor<T>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.data().size(), T(0));
      v_.emplace_back(p.data().size(), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.data().size(); ++j) {
        const double g = static_cast<double>(p.grad()[j]);
        double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * g;
        double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        double x = static_cast<double>(p.data()[j]);
        x -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * x);
        p.data()[j] = static_cast<T>(x);
      }
    }
  }

  const std::vector<Tensor<T>>& params() const { return params_; }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<Tensor<T>> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace kd
