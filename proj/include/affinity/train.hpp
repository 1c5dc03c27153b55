#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "affinity/errors.hpp"
#include "affinity/tensor.hpp"

namespace affinity {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 10;
  int batch_size = 32;
  uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-7;
  int k_folds = 5;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// One row of the cross-validation table.
struct FoldReport {
  int fold = 0;  // -1 marks the average row
  double accuracy = 0;
  double f1 = 0;
  double precision = 0;
  double recall = 0;
  double roc_auc = 0;
  double training_minutes = 0;
};

// First/second moment buffers, one pair per parameter tensor, plus the step
// count.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  long step = 0;

  static AdamState init(const std::vector<Tensor<T>*>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (auto* p : params) {
      s.m.emplace_back(p->numel(), T(0));
      s.v.emplace_back(p->numel(), T(0));
    }
    return s;
  }
};

// One Adam update from the gradients currently held by the parameter
// tensors: m/v moment update, bias correction, p -= lr * m^ / (sqrt(v^) + eps).
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& state, const TrainConfig& cfg) {
  if (params.size() != state.m.size())
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));
  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    if (!p.tracked() || p.numel() != state.m[i].size())
      throw ShapeError("adam_step: parameter " + std::to_string(i) +
                       " does not match its optimizer state");
    const std::vector<T>& g = p.grad();
    std::vector<T>& pm = state.m[i];
    std::vector<T>& pv = state.v[i];
    std::vector<T>& w = p.values();
    for (size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = b1 * static_cast<double>(pm[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(pv[j]) + (1.0 - b2) * gj * gj;
      pm[j] = static_cast<T>(mj);
      pv[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) -
                            cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

}  // namespace affinity
