#pragma once

#include <functional>

#include "kd/tensor.hpp"

namespace kd {

// Central-difference check of the autodiff gradient of a scalar-valued
// function at `point`. Returns max over elements of |a - n| / max(1,|a|,|n|).
// Intended to be run with T = double.
template <typename T>
T grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& point,
             T epsilon = T(1e-5)) {
  if (!(epsilon >= T(1e-7) && epsilon <= T(1e-4)))
    throw ConfigError("grad_check: epsilon must be in [1e-7, 1e-4]");

  Tensor<T> x = point.detach();
  x.set_requires_grad(true);
  Tensor<T> y = f(x);
  if (y.numel() != 1) throw DimError("grad_check: f must be scalar-valued");
  y.backward();
  std::vector<T> analytic = x.grad();

  T max_err = T(0);
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const T orig = x.data()[i];
    T fp, fm;
    {
      NoGradGuard ng;
      x.data()[i] = orig + epsilon;
      fp = f(x).item();
      x.data()[i] = orig - epsilon;
      fm = f(x).item();
      x.data()[i] = orig;
    }
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
      throw NumericError("grad_check: non-finite function value at perturbed point");
    const T numeric = (fp - fm) / (T(2) * epsilon);
    const T a = analytic.empty() ? T(0) : analytic[i];
    const T denom = std::max(T(1), std::max(std::abs(a), std::abs(numeric)));
    max_err = std::max(max_err, std::abs(a - numeric) / denom);
  }
  return max_err;
}

}  // namespace kd
