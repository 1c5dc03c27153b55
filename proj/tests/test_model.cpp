#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "affinity/errors.hpp"
#include "affinity/grad_check.hpp"
#include "affinity/model.hpp"
#include "doctest.h"

using namespace affinity;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_layers = 2;
  c.num_query_heads = 2;
  c.num_key_value_heads = 2;
  c.hidden_dim = 16;
  c.intermediate_dim = 8;
  c.dropout = 0.0;
  c.max_seq_len = 32;
  return c;
}

template <typename T>
Tensor<T> ones_mask(int b, int t) {
  return Tensor<T>::full({b, t}, T(1));
}

}  // namespace

TEST_CASE("default config matches the trained configuration") {
  ModelConfig c;
  CHECK(c.num_layers == 4);
  CHECK(c.num_query_heads == 12);
  CHECK(c.num_key_value_heads == 12);
  CHECK(c.hidden_dim == 384);
  CHECK(c.intermediate_dim == 192);
  CHECK(c.vocabulary_size == 30);
  CHECK(c.rope_max_wavelength == 100000.0);
  CHECK(c.rope_scaling_factor == 1.0);
  CHECK(c.norm_epsilon == 1e-6);
  CHECK(c.dropout == 0.1);
  CHECK(c.num_classes == 2);
  CHECK(c.head_dim() == 32);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config invariants are enforced") {
  ModelConfig c;
  c.num_query_heads = 5;  // 384 / 5 is not integral
  CHECK_THROWS_AS(c.validate(), ConfigError);

  ModelConfig c2;
  c2.num_key_value_heads = 5;  // 12 % 5 != 0
  CHECK_THROWS_AS(c2.validate(), ConfigError);

  ModelConfig c3;
  c3.hidden_dim = 12;  // head_dim 1, odd
  CHECK_THROWS_AS(c3.validate(), ConfigError);
}

TEST_CASE("default config parameter count is pinned") {
  ModelConfig c;
  CHECK(c.parameter_count() == 3407618u);
  Rng rng(1);
  auto p = init_params<float>(c, rng);
  CHECK(p.count() == c.parameter_count());
}

TEST_CASE("config json round trip") {
  ModelConfig c = tiny_config();
  c.causal_attention = false;
  ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.num_layers == c.num_layers);
  CHECK(back.hidden_dim == c.hidden_dim);
  CHECK(back.causal_attention == false);
  CHECK(back.dropout == c.dropout);
}

TEST_CASE("init_params rules") {
  ModelConfig c = tiny_config();
  Rng r1(9), r2(9);
  auto a = init_params<float>(c, r1);
  auto b = init_params<float>(c, r2);

  for (auto& [name, t] : a.named()) {
    if (name.find("gain") != std::string::npos) {
      for (float v : t->values()) CHECK(v == 1.0f);
    } else if (name.size() >= 2 && name.compare(name.size() - 2, 2, "_b") == 0) {
      for (float v : t->values()) CHECK(v == 0.0f);
    } else {
      for (float v : t->values()) CHECK(std::abs(v) <= 0.04f);  // 2 sigma clip
    }
  }

  auto an = a.named();
  auto bn = b.named();
  for (size_t i = 0; i < an.size(); ++i) CHECK(an[i].second->values() == bn[i].second->values());
}

TEST_CASE("rope frequencies") {
  ModelConfig c;  // head_dim 32, wavelength 1e5
  auto inv = rope_inverse_frequencies(c);
  REQUIRE(inv.size() == 16);
  CHECK(inv[0] == 1.0);  // exponent 0 -> angle(m, 0) = m
  CHECK(std::abs(inv[15] - std::pow(1e5, -30.0 / 32.0)) < 1e-12);
  CHECK(inv[15] == doctest::Approx(2.054e-5).epsilon(1e-3));

  auto table = rope_angles<double>(c, 4);
  // angle(m, 0) = m
  for (int m = 0; m < 4; ++m) {
    CHECK(table.cos_v[static_cast<size_t>(m) * 16] == doctest::Approx(std::cos(m)).epsilon(1e-12));
    CHECK(table.sin_v[static_cast<size_t>(m) * 16] == doctest::Approx(std::sin(m)).epsilon(1e-12));
  }
}

TEST_CASE("rope at position zero is the identity") {
  ModelConfig c = tiny_config();
  Rng rng(3);
  TensorD x = TensorD::zeros({1, 2, 1, 8});
  for (auto& v : x.values()) v = rng.uniform() * 2 - 1;
  auto rope = rope_angles<double>(c, 1);
  TensorD y = apply_rope(x, rope);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-15));
}

TEST_CASE("rope preserves per-pair norms") {
  ModelConfig c = tiny_config();
  Rng rng(5);
  const int t = 6, hd = c.head_dim(), half = hd / 2;
  TensorF x = TensorF::zeros({1, 1, t, hd});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform() * 2 - 1);
  auto rope = rope_angles<float>(c, t);
  TensorF y = apply_rope(x, rope);
  for (int m = 0; m < t; ++m)
    for (int j = 0; j < half; ++j) {
      const size_t a = static_cast<size_t>(m) * hd + j;
      const size_t b = a + static_cast<size_t>(half);
      const float before = x.values()[a] * x.values()[a] + x.values()[b] * x.values()[b];
      const float after = y.values()[a] * y.values()[a] + y.values()[b] * y.values()[b];
      CHECK(std::abs(std::sqrt(before) - std::sqrt(after)) < 1e-5f);
    }
}

TEST_CASE("rope dot products depend only on relative position") {
  ModelConfig c = tiny_config();
  Rng rng(7);
  const int hd = c.head_dim(), half = hd / 2;
  std::vector<double> q(hd), k(hd);
  for (auto& v : q) v = rng.uniform() * 2 - 1;
  for (auto& v : k) v = rng.uniform() * 2 - 1;

  auto rotated_dot = [&](int m, int n) {
    auto rope = rope_angles<double>(c, std::max(m, n) + 1);
    auto rot = [&](const std::vector<double>& v, int pos) {
      std::vector<double> out(static_cast<size_t>(hd));
      for (int j = 0; j < half; ++j) {
        const double cs = rope.cos_v[static_cast<size_t>(pos) * half + j];
        const double sn = rope.sin_v[static_cast<size_t>(pos) * half + j];
        out[static_cast<size_t>(j)] = v[static_cast<size_t>(j)] * cs - v[static_cast<size_t>(j + half)] * sn;
        out[static_cast<size_t>(j + half)] = v[static_cast<size_t>(j)] * sn + v[static_cast<size_t>(j + half)] * cs;
      }
      return out;
    };
    auto qr = rot(q, m), kr = rot(k, n);
    double dot = 0;
    for (int j = 0; j < hd; ++j) dot += qr[static_cast<size_t>(j)] * kr[static_cast<size_t>(j)];
    return dot;
  };

  CHECK(std::abs(rotated_dot(3, 1) - rotated_dot(7, 5)) < 1e-5);
  CHECK(std::abs(rotated_dot(4, 4) - rotated_dot(9, 9)) < 1e-5);
}

TEST_CASE("attention rows sum to one and padding gets no weight") {
  ModelConfig c = tiny_config();
  c.num_layers = 1;
  Rng rng(11);
  auto params = init_params<float>(c, rng);
  const int b = 2, t = 6;
  Rng drop(0);
  TensorF x = TensorF::zeros({b, t, c.hidden_dim});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform() - 0.5);
  TensorF mask = TensorF::from_vector({b, t}, {1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1});
  auto rope = rope_angles<float>(c, t);

  AttentionTrace<float> trace;
  attention_forward(x, params.layers[0], mask, rope, c, drop, false, &trace);
  REQUIRE(trace.probs.shape() == std::vector<int>{b, c.num_query_heads, t, t});

  for (int i = 0; i < b; ++i)
    for (int h = 0; h < c.num_query_heads; ++h)
      for (int q = 0; q < t; ++q) {
        float row_sum = 0;
        for (int k = 0; k < t; ++k) {
          const float w =
              trace.probs.values()[((static_cast<size_t>(i) * c.num_query_heads + h) * t + q) * t + k];
          row_sum += w;
          if (mask.values()[static_cast<size_t>(i) * t + k] == 0.0f) CHECK(w < 1e-6f);
        }
        CHECK(std::abs(row_sum - 1.0f) < 1e-6f);
      }
}

TEST_CASE("causal attention blocks information flow from the future") {
  ModelConfig c = tiny_config();
  c.causal_attention = true;
  Rng rng(13);
  auto params = init_params<double>(c, rng);
  const int b = 1, t = 7, j = 4;  // perturb position j

  std::vector<int> ids(static_cast<size_t>(b) * t);
  for (auto& id : ids) id = 5 + static_cast<int>(rng.bounded(20));
  std::vector<int> ids2 = ids;
  ids2[j] = ids[j] == 5 ? 6 : 5;

  Rng d1(0), d2(0);
  auto out1 = forward(params, ids, b, t, ones_mask<double>(b, t), c, d1, false, true);
  auto out2 = forward(params, ids2, b, t, ones_mask<double>(b, t), c, d2, false, true);
  REQUIRE(out1.hidden.has_value());

  const int h = c.hidden_dim;
  for (int pos = 0; pos < j; ++pos)
    for (int d = 0; d < h; ++d) {
      const size_t idx = static_cast<size_t>(pos) * h + d;
      CHECK(std::abs(out1.hidden->values()[idx] - out2.hidden->values()[idx]) < 1e-7);
    }
  // and the perturbed position itself must change
  double delta = 0;
  for (int d = 0; d < h; ++d)
    delta += std::abs(out1.hidden->values()[static_cast<size_t>(j) * h + d] -
                      out2.hidden->values()[static_cast<size_t>(j) * h + d]);
  CHECK(delta > 1e-6);
}

TEST_CASE("mlp block with zero weights is the identity") {
  ModelConfig c = tiny_config();
  c.num_layers = 1;
  Rng rng(17);
  auto params = init_params<float>(c, rng);
  auto& layer = params.layers[0];
  for (auto* t : {&layer.w_gate, &layer.w_up, &layer.w_down})
    std::fill(t->values().begin(), t->values().end(), 0.0f);

  TensorF x = TensorF::zeros({2, 3, c.hidden_dim});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform() - 0.5);
  Rng drop(0);
  TensorF y = mlp_forward(x, layer, c, drop, false);
  CHECK(y.shape() == x.shape());
  for (size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("mlp block matches a hand computation at H=2") {
  ModelConfig c;
  c.num_layers = 1;
  c.num_query_heads = 1;
  c.num_key_value_heads = 1;
  c.hidden_dim = 2;
  c.intermediate_dim = 2;
  c.dropout = 0.0;
  c.vocabulary_size = 30;
  c.num_classes = 2;
  CHECK_NOTHROW(c.validate());

  Rng rng(1);
  auto params = init_params<float>(c, rng);
  auto& layer = params.layers[0];
  layer.w_gate.values() = {0.1f, -0.2f, 0.3f, 0.4f};
  layer.w_up.values() = {0.5f, 0.6f, -0.7f, 0.8f};
  layer.w_down.values() = {0.9f, -0.1f, 0.2f, 0.3f};

  const double x0 = 1.0, x1 = 2.0;
  TensorF x = TensorF::from_vector({1, 1, 2}, {static_cast<float>(x0), static_cast<float>(x1)});
  Rng drop(0);
  TensorF y = mlp_forward(x, layer, c, drop, false);

  // plain-double replica of normalize -> gate/up -> silu -> down -> residual
  const double eps = c.norm_epsilon;
  const double inv = 1.0 / std::sqrt((x0 * x0 + x1 * x1) / 2.0 + eps);
  const double n0 = x0 * inv, n1 = x1 * inv;
  const double g0 = n0 * 0.1 + n1 * 0.3, g1 = n0 * -0.2 + n1 * 0.4;
  const double u0 = n0 * 0.5 + n1 * -0.7, u1 = n0 * 0.6 + n1 * 0.8;
  auto silu_d = [](double v) { return v / (1.0 + std::exp(-v)); };
  const double m0 = silu_d(g0) * u0, m1 = silu_d(g1) * u1;
  const double d0 = m0 * 0.9 + m1 * 0.2, d1 = m0 * -0.1 + m1 * 0.3;

  CHECK(y.values()[0] == doctest::Approx(x0 + d0).epsilon(1e-6));
  CHECK(y.values()[1] == doctest::Approx(x1 + d1).epsilon(1e-6));
}

TEST_CASE("forward shape and inference determinism") {
  ModelConfig c = tiny_config();
  Rng rng(19);
  auto params = init_params<float>(c, rng);
  const int b = 2, t = 8;
  std::vector<int> ids(static_cast<size_t>(b) * t, 5);
  Rng d1(0), d2(0);
  auto o1 = forward(params, ids, b, t, ones_mask<float>(b, t), c, d1, false);
  auto o2 = forward(params, ids, b, t, ones_mask<float>(b, t), c, d2, false);
  CHECK(o1.logits.shape() == std::vector<int>{2, 2});
  CHECK(o1.logits.values() == o2.logits.values());
  for (float v : o1.logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("forward rejects out-of-vocabulary ids") {
  ModelConfig c = tiny_config();
  Rng rng(23);
  auto params = init_params<float>(c, rng);
  std::vector<int> ids{5, 6, 77, 8};
  Rng drop(0);
  CHECK_THROWS_AS(forward(params, ids, 1, 4, ones_mask<float>(1, 4), c, drop, false),
                  VocabularyError);
}

TEST_CASE("appending masked padding leaves logits unchanged") {
  ModelConfig c = tiny_config();
  Rng rng(29);
  auto params = init_params<float>(c, rng);
  const int t = 6, pad = 3;
  std::vector<int> ids{2, 6, 7, 8, 9, 3};
  std::vector<int> ids_padded = ids;
  for (int i = 0; i < pad; ++i) ids_padded.push_back(0);

  TensorF mask = TensorF::full({1, t}, 1.0f);
  TensorF mask_padded = TensorF::zeros({1, t + pad});
  for (int i = 0; i < t; ++i) mask_padded.values()[static_cast<size_t>(i)] = 1.0f;

  Rng d1(0), d2(0);
  auto base = forward(params, ids, 1, t, mask, c, d1, false);
  auto padded = forward(params, ids_padded, 1, t + pad, mask_padded, c, d2, false);
  for (int j = 0; j < 2; ++j)
    CHECK(std::abs(base.logits.values()[static_cast<size_t>(j)] -
                   padded.logits.values()[static_cast<size_t>(j)]) < 1e-5f);
}

TEST_CASE("predict_proba rows") {
  auto p = predict_proba(TensorF::from_vector({2, 2}, {0, 0, 5, -5}));
  CHECK(p.values()[0] == doctest::Approx(0.5));
  CHECK(p.values()[1] == doctest::Approx(0.5));
  const double expected = 1.0 / (1.0 + std::exp(-10.0));  // direct evaluation
  CHECK(p.values()[2] == doctest::Approx(expected).epsilon(1e-6));
  CHECK(p.values()[2] + p.values()[3] == doctest::Approx(1.0).epsilon(1e-6));

  // argmax(proba) always equals argmax(logits)
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const float a = static_cast<float>(rng.uniform() * 20 - 10);
    const float b = static_cast<float>(rng.uniform() * 20 - 10);
    auto q = predict_proba(TensorF::from_vector({1, 2}, {a, b}));
    CHECK((q.values()[1] > q.values()[0]) == (b > a));
  }
}

TEST_CASE("grouped-query attention with fewer kv heads still works") {
  ModelConfig c = tiny_config();
  c.num_key_value_heads = 1;  // 2 query heads share 1 kv head
  CHECK_NOTHROW(c.validate());
  Rng rng(37);
  auto params = init_params<float>(c, rng);
  CHECK(params.layers[0].wk.shape() == std::vector<int>{16, 8});
  std::vector<int> ids(12, 6);
  Rng drop(0);
  auto out = forward(params, ids, 2, 6, ones_mask<float>(2, 6), c, drop, false);
  CHECK(out.logits.shape() == std::vector<int>{2, 2});
  for (float v : out.logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("single attention block passes grad check") {
  ModelConfig c = tiny_config();
  c.num_layers = 1;
  Rng rng(41);
  auto params = init_params<double>(c, rng);
  auto& layer = params.layers[0];
  // healthy random weight scale so gradients are O(1) and the finite
  // differences are well conditioned
  for (auto* t : {&layer.wq, &layer.wk, &layer.wv, &layer.wo})
    for (auto& v : t->values()) v = rng.uniform() - 0.5;
  for (auto& v : layer.attn_gain.values()) v = 0.8 + 0.4 * rng.uniform();
  const int b = 1, t = 4;
  TensorD x = TensorD::zeros({b, t, c.hidden_dim});
  for (auto& v : x.values()) v = rng.uniform() - 0.5;
  TensorD mask = TensorD::from_vector({1, 4}, {1, 1, 1, 0});
  auto rope = rope_angles<double>(c, t);
  TensorD w = TensorD::zeros({b, t, c.hidden_dim});
  for (auto& v : w.values()) v = rng.uniform() - 0.5;

  std::vector<Tensor<double>*> leaves{&x,        &layer.wq, &layer.wk,       &layer.wv,
                                      &layer.wo, &layer.attn_gain};
  auto build = [&]() {
    Rng drop(0);
    return sum(mul(attention_forward(x, layer, mask, rope, c, drop, false), w));
  };
  CHECK(grad_check<double>(build, leaves, 1e-5) < 1e-4);
}
