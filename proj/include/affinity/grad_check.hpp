#pragma once

#include <functional>
#include <vector>

#include "affinity/tensor.hpp"

namespace affinity {

// Central-difference verification of reverse-mode gradients. The builder must
// be deterministic (dropout off or its generator re-seeded inside) and is
// re-run twice per coordinate, with leaf data perturbed in place. Returns the
// max relative error over all coordinates of all leaves, with denominator
// max(|analytic|, |numeric|, 1e-8). Meaningful in f64 only.
template <typename T>
double grad_check(const std::function<Tensor<T>()>& build_loss, const std::vector<Tensor<T>*>& leaves,
                  T h) {
  for (auto* leaf : leaves) {
    leaf->set_requires_grad();
    leaf->zero_grad();
  }
  Tensor<T> loss = build_loss();
  backward(loss);

  double worst = 0.0;
  for (auto* leaf : leaves) {
    std::vector<T>& w = leaf->values();
    const std::vector<T>& analytic = leaf->grad();
    for (size_t i = 0; i < w.size(); ++i) {
      const T saved = w[i];
      w[i] = saved + h;
      const double f_plus = static_cast<double>(build_loss().item());
      w[i] = saved - h;
      const double f_minus = static_cast<double>(build_loss().item());
      w[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

template <typename T>
double grad_check(const std::function<Tensor<T>()>& build_loss, Tensor<T>& leaf, T h) {
  return grad_check<T>(build_loss, std::vector<Tensor<T>*>{&leaf}, h);
}

}  // namespace affinity
