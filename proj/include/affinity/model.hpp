#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "affinity/rng.hpp"
#include "affinity/tensor.hpp"

namespace affinity {

// Backbone hyperparameters. The defaults are the trained configuration:
// 4 pre-norm decoder layers, 12 heads over 384 dims, gated-silu MLP of 192,
// rotary positions with wavelength 1e5, binary classifier head.
struct ModelConfig {
  int num_layers = 4;
  int num_query_heads = 12;
  int num_key_value_heads = 12;
  int hidden_dim = 384;
  int intermediate_dim = 192;
  int vocabulary_size = 30;
  double rope_max_wavelength = 100000.0;
  double rope_scaling_factor = 1.0;
  double norm_epsilon = 1e-6;
  double dropout = 0.1;
  int max_seq_len = 256;
  int num_classes = 2;
  bool causal_attention = true;

  int head_dim() const { return hidden_dim / num_query_heads; }
  int kv_dim() const { return num_key_value_heads * head_dim(); }

  void validate() const;
  size_t parameter_count() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// wavelength^(-2i/head_dim) for i in [0, head_dim/2).
std::vector<double> rope_inverse_frequencies(const ModelConfig& config);

// Rotation table for positions [0, positions): angle(m, i) =
// (m / scaling_factor) * inv_freq_i.
template <typename T>
RopeTable<T> rope_angles(const ModelConfig& config, int positions) {
  const std::vector<double> inv_freq = rope_inverse_frequencies(config);
  RopeTable<T> table;
  table.positions = positions;
  table.half = static_cast<int>(inv_freq.size());
  table.cos_v.resize(static_cast<size_t>(positions) * inv_freq.size());
  table.sin_v.resize(static_cast<size_t>(positions) * inv_freq.size());
  for (int m = 0; m < positions; ++m)
    for (size_t i = 0; i < inv_freq.size(); ++i) {
      const double angle = (static_cast<double>(m) / config.rope_scaling_factor) * inv_freq[i];
      table.cos_v[static_cast<size_t>(m) * inv_freq.size() + i] = static_cast<T>(std::cos(angle));
      table.sin_v[static_cast<size_t>(m) * inv_freq.size() + i] = static_cast<T>(std::sin(angle));
    }
  return table;
}

// All trainable tensors, shapes fixed by ModelConfig.
template <typename T>
struct ParametersT {
  struct Layer {
    Tensor<T> attn_gain;  // [H]
    Tensor<T> wq;         // [H, H]
    Tensor<T> wk;         // [H, kv_dim]
    Tensor<T> wv;         // [H, kv_dim]
    Tensor<T> wo;         // [H, H]
    Tensor<T> mlp_gain;   // [H]
    Tensor<T> w_gate;     // [H, I]
    Tensor<T> w_up;       // [H, I]
    Tensor<T> w_down;     // [I, H]
  };

  Tensor<T> token_embedding;  // [V, H]
  std::vector<Layer> layers;
  Tensor<T> final_gain;    // [H]
  Tensor<T> head_hidden_w;  // [H, H]
  Tensor<T> head_hidden_b;  // [H]
  Tensor<T> head_out_w;     // [H, C]
  Tensor<T> head_out_b;     // [C]

  // Stable name -> tensor listing; this order is the checkpoint manifest
  // order and the optimizer state order.
  std::vector<std::pair<std::string, Tensor<T>*>> named() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("token_embedding", &token_embedding);
    for (size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      out.emplace_back(p + "attn_gain", &layers[i].attn_gain);
      out.emplace_back(p + "wq", &layers[i].wq);
      out.emplace_back(p + "wk", &layers[i].wk);
      out.emplace_back(p + "wv", &layers[i].wv);
      out.emplace_back(p + "wo", &layers[i].wo);
      out.emplace_back(p + "mlp_gain", &layers[i].mlp_gain);
      out.emplace_back(p + "w_gate", &layers[i].w_gate);
      out.emplace_back(p + "w_up", &layers[i].w_up);
      out.emplace_back(p + "w_down", &layers[i].w_down);
    }
    out.emplace_back("final_gain", &final_gain);
    out.emplace_back("head_hidden_w", &head_hidden_w);
    out.emplace_back("head_hidden_b", &head_hidden_b);
    out.emplace_back("head_out_w", &head_out_w);
    out.emplace_back("head_out_b", &head_out_b);
    return out;
  }

  std::vector<Tensor<T>*> all() {
    std::vector<Tensor<T>*> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  void mark_differentiable() {
    for (auto* t : all()) t->set_requires_grad();
  }

  size_t count() {
    size_t n = 0;
    for (auto* t : all()) n += t->numel();
    return n;
  }
};

using Parameters = ParametersT<float>;

// Weights ~ Normal(0, 0.02) truncated at +/- 2 sigma, biases 0, gains 1.
// Deterministic: tensors are filled in named() order.
template <typename T>
ParametersT<T> init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int h = config.hidden_dim, i = config.intermediate_dim, v = config.vocabulary_size;
  const int kd = config.kv_dim(), c = config.num_classes;

  ParametersT<T> p;
  p.token_embedding = Tensor<T>::zeros({v, h});
  p.layers.resize(static_cast<size_t>(config.num_layers));
  for (auto& layer : p.layers) {
    layer.attn_gain = Tensor<T>::full({h}, T(1));
    layer.wq = Tensor<T>::zeros({h, h});
    layer.wk = Tensor<T>::zeros({h, kd});
    layer.wv = Tensor<T>::zeros({h, kd});
    layer.wo = Tensor<T>::zeros({h, h});
    layer.mlp_gain = Tensor<T>::full({h}, T(1));
    layer.w_gate = Tensor<T>::zeros({h, i});
    layer.w_up = Tensor<T>::zeros({h, i});
    layer.w_down = Tensor<T>::zeros({i, h});
  }
  p.final_gain = Tensor<T>::full({h}, T(1));
  p.head_hidden_w = Tensor<T>::zeros({h, h});
  p.head_hidden_b = Tensor<T>::zeros({h});
  p.head_out_w = Tensor<T>::zeros({h, c});
  p.head_out_b = Tensor<T>::zeros({c});

  for (auto& [name, t] : p.named()) {
    const bool is_gain = name.find("gain") != std::string::npos;
    const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, "_b") == 0;
    if (is_gain || is_bias) continue;
    for (auto& w : t->values()) w = static_cast<T>(rng.truncated_normal(0.02, 2.0));
  }
  return p;
}

// Post-softmax attention probabilities of one block, for inspection.
template <typename T>
struct AttentionTrace {
  Tensor<T> probs;  // [B, heads, T, T]
};

// Pre-norm residual attention block with rotary positions. Padding columns
// and (optionally) future columns are excluded via a large negative score
// bias; attention probabilities see dropout when training.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, typename ParametersT<T>::Layer& layer,
                            const Tensor<T>& mask, const RopeTable<T>& rope,
                            const ModelConfig& config, Rng& rng, bool training,
                            AttentionTrace<T>* trace = nullptr) {
  const int b = x.dim(0), t = x.dim(1), h = x.dim(2);
  if (mask.rank() != 2 || mask.dim(0) != b || mask.dim(1) != t)
    throw ShapeError("attention_forward: mask " + detail::shape_str(mask.shape()) +
                     " does not match x " + detail::shape_str(x.shape()));
  const int qh = config.num_query_heads, kvh = config.num_key_value_heads;
  const int hd = config.head_dim();

  Tensor<T> normed = rms_norm(x, layer.attn_gain, static_cast<T>(config.norm_epsilon));
  Tensor<T> q = matmul(normed, layer.wq);
  Tensor<T> k = matmul(normed, layer.wk);
  Tensor<T> v = matmul(normed, layer.wv);

  Tensor<T> q4 = transpose(reshape(q, {b, t, qh, hd}), {0, 2, 1, 3});
  Tensor<T> k4 = transpose(reshape(k, {b, t, kvh, hd}), {0, 2, 1, 3});
  Tensor<T> v4 = transpose(reshape(v, {b, t, kvh, hd}), {0, 2, 1, 3});

  q4 = apply_rope(q4, rope);
  k4 = apply_rope(k4, rope);

  if (kvh < qh) {
    const int rep = qh / kvh;
    k4 = repeat_heads(k4, rep);
    v4 = repeat_heads(v4, rep);
  }

  Tensor<T> scores = scale(matmul(q4, transpose(k4, {0, 1, 3, 2})),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  scores = attention_bias_add(scores, mask, config.causal_attention);
  Tensor<T> probs = softmax(scores);
  if (trace) trace->probs = probs;
  probs = dropout(probs, config.dropout, rng, training);

  Tensor<T> ctx = matmul(probs, v4);  // [b, qh, t, hd]
  ctx = reshape(transpose(ctx, {0, 2, 1, 3}), {b, t, h});
  return add(x, matmul(ctx, layer.wo));
}

// Pre-norm residual gated-silu MLP block; block output sees dropout when
// training.
template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, typename ParametersT<T>::Layer& layer,
                      const ModelConfig& config, Rng& rng, bool training) {
  Tensor<T> normed = rms_norm(x, layer.mlp_gain, static_cast<T>(config.norm_epsilon));
  Tensor<T> gate = silu(matmul(normed, layer.w_gate));
  Tensor<T> up = matmul(normed, layer.w_up);
  Tensor<T> down = matmul(mul(gate, up), layer.w_down);
  down = dropout(down, config.dropout, rng, training);
  return add(x, down);
}

template <typename T>
struct ForwardOutput {
  Tensor<T> logits;                  // [B, num_classes]
  std::optional<Tensor<T>> hidden;   // [B, T, H] after the final norm
};

// Embedding -> num_layers x (attention, mlp) -> final norm -> masked mean
// pooling -> dense+relu -> dense logits.
template <typename T>
ForwardOutput<T> forward(ParametersT<T>& params, const std::vector<int>& ids, int b, int t,
                         const Tensor<T>& mask, const ModelConfig& config, Rng& rng, bool training,
                         bool want_hidden = false) {
  if (t > config.max_seq_len)
    throw ConfigError("forward: sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  Tensor<T> x = embedding(params.token_embedding, ids, b, t);
  const RopeTable<T> rope = rope_angles<T>(config, t);
  for (auto& layer : params.layers) {
    x = attention_forward(x, layer, mask, rope, config, rng, training);
    x = mlp_forward(x, layer, config, rng, training);
  }
  x = rms_norm(x, params.final_gain, static_cast<T>(config.norm_epsilon));

  ForwardOutput<T> out;
  if (want_hidden) out.hidden = x;
  Tensor<T> pooled = masked_mean(x, mask);
  Tensor<T> z = relu(add_bias(matmul(pooled, params.head_hidden_w), params.head_hidden_b));
  out.logits = add_bias(matmul(z, params.head_out_w), params.head_out_b);
  return out;
}

// Softmax over the class axis; column 1 is the binder probability.
template <typename T>
Tensor<T> predict_proba(const Tensor<T>& logits) {
  return softmax(logits);
}

}  // namespace affinity
